use crate::config::Placement;
use olap_core::{team, Error, Result};
use std::collections::BTreeSet;
use std::path::Path;

/// Physical cores per NUMA node, each represented by its lowest logical CPU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub nodes: Vec<Vec<usize>>,
}

impl Topology {
    pub fn detect() -> Result<Self> {
        Topology::from_sysfs(Path::new("/sys/devices/system"))
    }

    /// Reads `cpu/online`, `cpu/cpuN/topology/{physical_package_id,core_id}`
    /// and `node/nodeK/cpulist` below `root`. A host without node
    /// directories counts as one node.
    pub fn from_sysfs(root: &Path) -> Result<Self> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|e| {
                Error::Unsupported(format!(
                    "cannot read CPU topology from {}: {e}",
                    p.display()
                ))
            })
        };
        let online = parse_cpu_list(&read(&root.join("cpu/online"))?)?;
        let mut node_cpus: Vec<(usize, Vec<usize>)> = Vec::new();
        if let Ok(entries) = std::fs::read_dir(root.join("node")) {
            for e in entries.flatten() {
                let name = e.file_name().to_string_lossy().into_owned();
                if let Some(id) = name.strip_prefix("node").and_then(|n| n.parse().ok()) {
                    let cpus = parse_cpu_list(&read(&e.path().join("cpulist"))?)?;
                    if !cpus.is_empty() {
                        node_cpus.push((id, cpus));
                    }
                }
            }
        }
        node_cpus.sort();
        if node_cpus.is_empty() {
            node_cpus.push((0, online.clone()));
        }

        let mut nodes = Vec::with_capacity(node_cpus.len());
        for (_, cpus) in node_cpus {
            let mut seen = BTreeSet::new();
            let mut cores = Vec::new();
            for cpu in cpus.into_iter().filter(|c| online.contains(c)) {
                let topo = root.join(format!("cpu/cpu{cpu}/topology"));
                let id =
                    |f: &str| -> Result<String> { Ok(read(&topo.join(f))?.trim().to_string()) };
                let key = (id("physical_package_id")?, id("core_id")?);
                if seen.insert(key) {
                    cores.push(cpu);
                }
            }
            nodes.push(cores);
        }
        Ok(Topology { nodes })
    }

    pub fn physical_cores(&self) -> usize {
        self.nodes.iter().map(Vec::len).sum()
    }

    pub fn describe(&self) -> String {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, c)| format!("node{i}: {} physical cores {:?}", c.len(), c))
            .collect::<Vec<_>>()
            .join("; ")
    }

    /// Cores for `threads` workers under `placement`, with data on node 0.
    pub fn select(&self, placement: Placement, threads: usize) -> Result<Vec<usize>> {
        let short = |have: usize| {
            Error::Config(format!(
                "{threads} threads requested with {} placement but only {have} physical cores qualify ({})",
                placement.as_str(),
                self.describe()
            ))
        };
        let multi_node = || {
            if self.nodes.len() < 2 {
                Err(Error::Unsupported(format!(
                    "{} placement needs at least two NUMA nodes, this host has {}",
                    placement.as_str(),
                    self.nodes.len()
                )))
            } else {
                Ok(())
            }
        };
        match placement {
            Placement::None => Ok(Vec::new()),
            Placement::Local => {
                let local = &self.nodes[0];
                if threads > local.len() {
                    return Err(short(local.len()));
                }
                Ok(local[..threads].to_vec())
            }
            Placement::Remote => {
                multi_node()?;
                let remote = &self.nodes[1];
                if threads > remote.len() {
                    return Err(short(remote.len()));
                }
                Ok(remote[..threads].to_vec())
            }
            Placement::Interleave => {
                multi_node()?;
                let mut out = Vec::with_capacity(threads);
                let mut next = vec![0usize; self.nodes.len()];
                let mut node = 0;
                let mut idle = 0;
                while out.len() < threads && idle < self.nodes.len() {
                    if let Some(&c) = self.nodes[node].get(next[node]) {
                        out.push(c);
                        next[node] += 1;
                        idle = 0;
                    } else {
                        idle += 1;
                    }
                    node = (node + 1) % self.nodes.len();
                }
                if out.len() < threads {
                    return Err(short(out.len()));
                }
                Ok(out)
            }
        }
    }
}

fn parse_cpu_list(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Format(format!("malformed CPU list `{}`", s.trim()));
    let mut out = Vec::new();
    for part in s.trim().split(',').filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) =
                    (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementReport {
    pub placement: Placement,
    /// Core of worker `i` is `cores[i]`; empty without pinning.
    pub cores: Vec<usize>,
    pub nodes: usize,
}

/// Binds future worker teams to distinct physical cores chosen by
/// `placement`. The calling thread is moved to the data node so that data
/// generated afterwards is allocated there. `Placement::None` clears any
/// earlier binding.
pub fn pin_threads(placement: Placement, threads: usize) -> Result<PlacementReport> {
    if placement == Placement::None {
        team::set_affinity(None);
        return Ok(PlacementReport {
            placement,
            cores: Vec::new(),
            nodes: 0,
        });
    }
    let topo = Topology::detect()?;
    let cores = topo.select(placement, threads)?;
    if let Some(&data_core) = topo.nodes[0].first() {
        team::pin_current_thread(data_core)?;
    }
    team::set_affinity(Some(cores.clone()));
    Ok(PlacementReport {
        placement,
        cores,
        nodes: topo.nodes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    /// Fake sysfs: `nodes[k]` lists (cpu, core_id) pairs of node k.
    fn fake(nodes: &[&[(usize, usize)]]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let all: Vec<usize> = nodes.iter().flat_map(|n| n.iter().map(|c| c.0)).collect();
        fs::create_dir_all(root.join("cpu")).unwrap();
        let list: Vec<String> = all.iter().map(|c| c.to_string()).collect();
        fs::write(root.join("cpu/online"), list.join(",")).unwrap();
        for (k, node) in nodes.iter().enumerate() {
            let nd = root.join(format!("node/node{k}"));
            fs::create_dir_all(&nd).unwrap();
            let l: Vec<String> = node.iter().map(|c| c.0.to_string()).collect();
            fs::write(nd.join("cpulist"), l.join(",")).unwrap();
            for &(cpu, core) in node.iter() {
                let t = root.join(format!("cpu/cpu{cpu}/topology"));
                fs::create_dir_all(&t).unwrap();
                fs::write(t.join("physical_package_id"), k.to_string()).unwrap();
                fs::write(t.join("core_id"), core.to_string()).unwrap();
            }
        }
        dir
    }

    #[test]
    fn cpu_lists() {
        assert_eq!(
            parse_cpu_list("0-3,8,10-11\n").unwrap(),
            vec![0, 1, 2, 3, 8, 10, 11]
        );
        assert_eq!(parse_cpu_list("0").unwrap(), vec![0]);
        assert!(parse_cpu_list("x-1").is_err());
    }

    #[test]
    fn smt_siblings_collapse() {
        let d = fake(&[&[(0, 0), (1, 1), (2, 0), (3, 1)]]);
        let t = Topology::from_sysfs(d.path()).unwrap();
        assert_eq!(t.nodes, vec![vec![0, 1]]);
        assert_eq!(t.select(Placement::Local, 1).unwrap(), vec![0]);
        assert!(t.select(Placement::Local, 3).is_err());
        let err = t.select(Placement::Remote, 1).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
        assert!(t.select(Placement::Interleave, 1).is_err());
    }

    #[test]
    fn two_nodes() {
        let d = fake(&[&[(0, 0), (1, 1)], &[(2, 0), (3, 1)]]);
        let t = Topology::from_sysfs(d.path()).unwrap();
        assert_eq!(t.select(Placement::Remote, 2).unwrap(), vec![2, 3]);
        assert_eq!(
            t.select(Placement::Interleave, 4).unwrap(),
            vec![0, 2, 1, 3]
        );
        assert!(t.select(Placement::Interleave, 5).is_err());
    }

    #[test]
    fn host_topology_is_readable() {
        if let Ok(t) = Topology::detect() {
            assert!(t.physical_cores() >= 1);
            assert_eq!(t.select(Placement::Local, 1).unwrap().len(), 1);
            assert!(t.select(Placement::Local, t.physical_cores() + 1).is_err());
        }
    }
}
