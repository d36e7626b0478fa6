//! TPC-H queries 3, 10, 12 and 19 reduced to filters, key joins and a
//! final `count(*)`. Every operator materializes its full output before
//! the next one starts.
//!
//! Predicate constants (standard TPC-H substitution defaults):
//!
//! | query | predicates |
//! |-------|------------|
//! | Q3  | c_mktsegment = BUILDING; o_orderdate < 1995-03-15; l_shipdate > 1995-03-15 |
//! | Q10 | 1993-10-01 <= o_orderdate < 1994-01-01; l_returnflag = R |
//! | Q12 | l_shipmode in (MAIL, SHIP); l_commitdate < l_receiptdate; l_shipdate < l_commitdate; 1994-01-01 <= l_receiptdate < 1995-01-01 |
//! | Q19 | l_shipmode in (AIR, REG AIR); l_shipinstruct = DELIVER IN PERSON; one of three brand / container / size / quantity groups (below) |
//!
//! Q19 groups: Brand#12, SM {CASE, BOX, PACK, PKG}, size 1..=5, quantity
//! 1..=11; Brand#23, MED {BAG, BOX, PKG, PACK}, size 1..=10, quantity
//! 10..=20; Brand#34, LG {CASE, BOX, PACK, PKG}, size 1..=15, quantity
//! 20..=30.
//!
//! Joins always build on the primary-key side.

use crate::datagen::tpch::{
    brand_code, container_code, epoch_day, mktsegment_code, returnflag_code, shipinstruct_code,
    shipmode_code,
};
use crate::datagen::{Relation, TpchLiteDb, Tuple};
use crate::error::{Error, Result};
use crate::joins::{JoinAlgorithm, JoinOptions, JoinedRow, KernelVariant, MAX_RADIX_BITS};
use crate::sync::QueueKind;
use crate::team;
use crate::timing::Clock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QueryId {
    Q3,
    Q10,
    Q12,
    Q19,
}

impl QueryId {
    pub const ALL: [QueryId; 4] = [QueryId::Q3, QueryId::Q10, QueryId::Q12, QueryId::Q19];

    pub fn number(self) -> u32 {
        match self {
            QueryId::Q3 => 3,
            QueryId::Q10 => 10,
            QueryId::Q12 => 12,
            QueryId::Q19 => 19,
        }
    }

    pub fn from_number(n: u32) -> Result<Self> {
        match n {
            3 => Ok(QueryId::Q3),
            10 => Ok(QueryId::Q10),
            12 => Ok(QueryId::Q12),
            19 => Ok(QueryId::Q19),
            other => Err(Error::InvalidArgument(format!(
                "unknown query id {other}, expected 3, 10, 12 or 19"
            ))),
        }
    }
}

impl std::fmt::Display for QueryId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "q{}", self.number())
    }
}

impl std::str::FromStr for QueryId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim_start_matches(['q', 'Q']);
        let n = digits
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("unknown query `{s}`")))?;
        QueryId::from_number(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Filter,
    Join,
    Rekey,
    PostFilter,
    Count,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Operator {
    pub kind: OpKind,
    pub name: &'static str,
    pub inputs: Vec<&'static str>,
    pub output: &'static str,
}

/// Operators in execution order with their input and output bindings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryPlan {
    pub query: QueryId,
    pub operators: Vec<Operator>,
}

fn op(kind: OpKind, name: &'static str, inputs: &[&'static str], output: &'static str) -> Operator {
    Operator {
        kind,
        name,
        inputs: inputs.to_vec(),
        output,
    }
}

impl QueryPlan {
    pub fn for_query(query: QueryId) -> Self {
        use OpKind::*;
        let operators = match query {
            QueryId::Q3 => vec![
                op(Filter, "filter_customer", &["customer"], "c"),
                op(Filter, "filter_orders", &["orders"], "o"),
                op(Join, "join_customer_orders", &["c", "o"], "co"),
                op(Rekey, "rekey_orderkey", &["co"], "co_by_order"),
                op(Filter, "filter_lineitem", &["lineitem"], "l"),
                op(Join, "join_orders_lineitem", &["co_by_order", "l"], "col"),
                op(Count, "count", &["col"], "result"),
            ],
            QueryId::Q10 => vec![
                op(Filter, "filter_orders", &["orders"], "o"),
                op(Filter, "scan_customer", &["customer"], "c"),
                op(Join, "join_customer_orders", &["c", "o"], "co"),
                op(Rekey, "rekey_orderkey", &["co"], "co_by_order"),
                op(Filter, "filter_lineitem", &["lineitem"], "l"),
                op(Join, "join_orders_lineitem", &["co_by_order", "l"], "col"),
                op(Count, "count", &["col"], "result"),
            ],
            QueryId::Q12 => vec![
                op(Filter, "filter_lineitem", &["lineitem"], "l"),
                op(Filter, "scan_orders", &["orders"], "o"),
                op(Join, "join_orders_lineitem", &["o", "l"], "ol"),
                op(Count, "count", &["ol"], "result"),
            ],
            QueryId::Q19 => vec![
                op(Filter, "filter_part", &["part"], "p"),
                op(Filter, "filter_lineitem", &["lineitem"], "l"),
                op(Join, "join_part_lineitem", &["p", "l"], "pl"),
                op(PostFilter, "filter_groups", &["pl"], "pl_match"),
                op(Count, "count", &["pl_match"], "result"),
            ],
        };
        QueryPlan { query, operators }
    }

    pub fn operator_names(&self) -> Vec<&'static str> {
        self.operators.iter().map(|o| o.name).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryOptions {
    pub threads: usize,
    pub join: JoinAlgorithm,
    pub kernel_variant: KernelVariant,
    pub queue_kind: QueueKind,
}

impl Default for QueryOptions {
    fn default() -> Self {
        QueryOptions {
            threads: 1,
            join: JoinAlgorithm::Rho,
            kernel_variant: KernelVariant::Naive,
            queue_kind: QueueKind::LockFree,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryResult {
    pub query: QueryId,
    pub count: u64,
    /// Operator name and elapsed nanoseconds, in plan order.
    pub operator_times: Vec<(String, u64)>,
    pub total_ns: u64,
}

impl QueryResult {
    pub fn operator_sum_ns(&self) -> u64 {
        self.operator_times.iter().map(|(_, t)| t).sum()
    }
}

/// Radix bits for a query join: partitions of roughly 1024 build tuples,
/// never more partitions than build tuples.
pub fn auto_radix_bits(build_len: usize) -> (u32, u32) {
    if build_len < 2 {
        return (0, 0);
    }
    let max_bits = (usize::BITS - 1 - build_len.leading_zeros()).min(MAX_RADIX_BITS);
    let want = (build_len / 1024)
        .max(1)
        .next_power_of_two()
        .trailing_zeros();
    let bits = want.min(max_bits);
    let b1 = bits.div_ceil(2);
    (b1, bits - b1)
}

struct Executor<'a> {
    opts: &'a QueryOptions,
    times: Vec<(String, u64)>,
}

impl Executor<'_> {
    fn timed<R>(&mut self, name: &str, f: impl FnOnce(&QueryOptions) -> Result<R>) -> Result<R> {
        let clock = Clock::global();
        let start = clock.now();
        let r = f(self.opts)?;
        self.times.push((name.to_string(), clock.elapsed_ns(start)));
        Ok(r)
    }

    fn join(&mut self, name: &str, build: &Relation, probe: &Relation) -> Result<Vec<JoinedRow>> {
        self.timed(name, |o| {
            if build.is_empty() || probe.is_empty() {
                return Ok(Vec::new());
            }
            let (b1, b2) = auto_radix_bits(build.len());
            let jo = JoinOptions {
                threads: o.threads,
                radix_bits_pass1: b1,
                radix_bits_pass2: b2,
                kernel_variant: o.kernel_variant,
                queue_kind: o.queue_kind,
                materialize: true,
            };
            Ok(o.join.run(build, probe, &jo)?.output.unwrap_or_default())
        })
    }
}

/// Parallel selection over row ids `0..rows`; emits `(key(i), payload(i))`
/// for every row passing `keep`, in row order.
fn select(
    threads: usize,
    rows: usize,
    keep: impl Fn(usize) -> bool + Sync,
    key: impl Fn(usize) -> u32 + Sync,
    payload: impl Fn(usize) -> u32 + Sync,
) -> Relation {
    let chunks = team::chunk_ranges(rows, threads, 1);
    let parts = team::run(chunks.len(), |tid| {
        chunks[tid]
            .clone()
            .filter(|&i| keep(i))
            .map(|i| Tuple::new(key(i), payload(i)))
            .collect::<Vec<_>>()
    });
    parts.into_iter().flatten().collect()
}

fn rekey(rows: &[JoinedRow], f: impl Fn(&JoinedRow) -> Tuple) -> Relation {
    rows.iter().map(f).collect()
}

/// Integer predicate constants of the four queries.
#[derive(Debug, Clone)]
pub struct Predicates {
    pub q3_segment: u32,
    pub q3_date: u32,
    pub q10_from: u32,
    pub q10_to: u32,
    pub q10_flag: u32,
    pub q12_modes: [u32; 2],
    pub q12_from: u32,
    pub q12_to: u32,
    pub q19_modes: [u32; 2],
    pub q19_instruct: u32,
    pub q19_groups: [Q19Group; 3],
}

#[derive(Debug, Clone)]
pub struct Q19Group {
    pub brand: u32,
    pub containers: [u32; 4],
    pub max_size: u32,
    pub quantity: (u32, u32),
}

impl Predicates {
    pub fn standard() -> Self {
        let group = |brand: &str, size: &str, kinds: [&str; 4], max_size, quantity| Q19Group {
            brand: brand_code(brand),
            containers: kinds.map(|k| container_code(&format!("{size} {k}"))),
            max_size,
            quantity,
        };
        Predicates {
            q3_segment: mktsegment_code("BUILDING"),
            q3_date: epoch_day(1995, 3, 15),
            q10_from: epoch_day(1993, 10, 1),
            q10_to: epoch_day(1994, 1, 1),
            q10_flag: returnflag_code("R"),
            q12_modes: [shipmode_code("MAIL"), shipmode_code("SHIP")],
            q12_from: epoch_day(1994, 1, 1),
            q12_to: epoch_day(1995, 1, 1),
            q19_modes: [shipmode_code("AIR"), shipmode_code("REG AIR")],
            q19_instruct: shipinstruct_code("DELIVER IN PERSON"),
            q19_groups: [
                group("Brand#12", "SM", ["CASE", "BOX", "PACK", "PKG"], 5, (1, 11)),
                group(
                    "Brand#23",
                    "MED",
                    ["BAG", "BOX", "PKG", "PACK"],
                    10,
                    (10, 20),
                ),
                group(
                    "Brand#34",
                    "LG",
                    ["CASE", "BOX", "PACK", "PKG"],
                    15,
                    (20, 30),
                ),
            ],
        }
    }

    /// Index of the Q19 group a part belongs to, if any.
    pub fn q19_part_group(&self, brand: u32, container: u32, size: u32) -> Option<usize> {
        self.q19_groups.iter().position(|g| {
            g.brand == brand
                && g.containers.contains(&container)
                && (1..=g.max_size).contains(&size)
        })
    }
}

/// Runs the reduced plan of `query` and returns `count(*)` with per-operator
/// timings.
pub fn run_query(query: QueryId, db: &TpchLiteDb, opts: &QueryOptions) -> Result<QueryResult> {
    run_query_with(query, db, opts, &Predicates::standard())
}

/// [`run_query`] with caller-supplied predicate constants.
pub fn run_query_with(
    query: QueryId,
    db: &TpchLiteDb,
    opts: &QueryOptions,
    pr: &Predicates,
) -> Result<QueryResult> {
    if opts.threads == 0 {
        return Err(Error::Config("threads must be at least 1".into()));
    }
    let clock = Clock::global();
    let start = clock.now();
    let mut ex = Executor {
        opts,
        times: Vec::new(),
    };
    let t = opts.threads;
    let (c, o, l, p) = (&db.customer, &db.orders, &db.lineitem, &db.part);

    let count = match query {
        QueryId::Q3 => {
            let cr = ex.timed("filter_customer", |_| {
                Ok(select(
                    t,
                    c.len(),
                    |i| c.mktsegment[i] == pr.q3_segment,
                    |i| c.custkey[i],
                    |i| c.custkey[i],
                ))
            })?;
            let or = ex.timed("filter_orders", |_| {
                Ok(select(
                    t,
                    o.len(),
                    |i| o.orderdate[i] < pr.q3_date,
                    |i| o.custkey[i],
                    |i| o.orderkey[i],
                ))
            })?;
            let co = ex.join("join_customer_orders", &cr, &or)?;
            let co = ex.timed("rekey_orderkey", |_| {
                Ok(rekey(&co, |r| Tuple::new(r.right_payload, r.key)))
            })?;
            let lr = ex.timed("filter_lineitem", |_| {
                Ok(select(
                    t,
                    l.len(),
                    |i| l.shipdate[i] > pr.q3_date,
                    |i| l.orderkey[i],
                    |i| i as u32,
                ))
            })?;
            let col = ex.join("join_orders_lineitem", &co, &lr)?;
            ex.timed("count", |_| Ok(col.len() as u64))?
        }
        QueryId::Q10 => {
            let or = ex.timed("filter_orders", |_| {
                Ok(select(
                    t,
                    o.len(),
                    |i| (pr.q10_from..pr.q10_to).contains(&o.orderdate[i]),
                    |i| o.custkey[i],
                    |i| o.orderkey[i],
                ))
            })?;
            let cr = ex.timed("scan_customer", |_| {
                Ok(select(
                    t,
                    c.len(),
                    |_| true,
                    |i| c.custkey[i],
                    |i| c.custkey[i],
                ))
            })?;
            let co = ex.join("join_customer_orders", &cr, &or)?;
            let co = ex.timed("rekey_orderkey", |_| {
                Ok(rekey(&co, |r| Tuple::new(r.right_payload, r.key)))
            })?;
            let lr = ex.timed("filter_lineitem", |_| {
                Ok(select(
                    t,
                    l.len(),
                    |i| l.returnflag[i] == pr.q10_flag,
                    |i| l.orderkey[i],
                    |i| i as u32,
                ))
            })?;
            let col = ex.join("join_orders_lineitem", &co, &lr)?;
            ex.timed("count", |_| Ok(col.len() as u64))?
        }
        QueryId::Q12 => {
            let lr = ex.timed("filter_lineitem", |_| {
                Ok(select(
                    t,
                    l.len(),
                    |i| {
                        pr.q12_modes.contains(&l.shipmode[i])
                            && l.commitdate[i] < l.receiptdate[i]
                            && l.shipdate[i] < l.commitdate[i]
                            && (pr.q12_from..pr.q12_to).contains(&l.receiptdate[i])
                    },
                    |i| l.orderkey[i],
                    |i| i as u32,
                ))
            })?;
            let or = ex.timed("scan_orders", |_| {
                Ok(select(
                    t,
                    o.len(),
                    |_| true,
                    |i| o.orderkey[i],
                    |i| o.orderkey[i],
                ))
            })?;
            let ol = ex.join("join_orders_lineitem", &or, &lr)?;
            ex.timed("count", |_| Ok(ol.len() as u64))?
        }
        QueryId::Q19 => {
            let pr_rel = ex.timed("filter_part", |_| {
                let group = |i: usize| pr.q19_part_group(p.brand[i], p.container[i], p.size[i]);
                Ok(select(
                    t,
                    p.len(),
                    |i| group(i).is_some(),
                    |i| p.partkey[i],
                    |i| group(i).unwrap() as u32,
                ))
            })?;
            let lr = ex.timed("filter_lineitem", |_| {
                Ok(select(
                    t,
                    l.len(),
                    |i| {
                        pr.q19_modes.contains(&l.shipmode[i])
                            && l.shipinstruct[i] == pr.q19_instruct
                            && pr
                                .q19_groups
                                .iter()
                                .any(|g| (g.quantity.0..=g.quantity.1).contains(&l.quantity[i]))
                    },
                    |i| l.partkey[i],
                    |i| l.quantity[i],
                ))
            })?;
            let pl = ex.join("join_part_lineitem", &pr_rel, &lr)?;
            let kept = ex.timed("filter_groups", |_| {
                Ok(pl
                    .iter()
                    .filter(|r| {
                        let (lo, hi) = pr.q19_groups[r.left_payload as usize].quantity;
                        (lo..=hi).contains(&r.right_payload)
                    })
                    .copied()
                    .collect::<Vec<_>>())
            })?;
            ex.timed("count", |_| Ok(kept.len() as u64))?
        }
    };

    Ok(QueryResult {
        query,
        count,
        operator_times: ex.times,
        total_ns: clock.elapsed_ns(start),
    })
}

/// Row-at-a-time nested-loop evaluation of the same predicates; quadratic,
/// meant for tiny databases only.
pub fn reference_count(query: QueryId, db: &TpchLiteDb) -> u64 {
    let pr = Predicates::standard();
    let (c, o, l, p) = (&db.customer, &db.orders, &db.lineitem, &db.part);
    let mut n = 0;
    for li in 0..l.len() {
        match query {
            QueryId::Q3 => {
                if l.shipdate[li] <= pr.q3_date {
                    continue;
                }
                for oi in 0..o.len() {
                    if o.orderkey[oi] != l.orderkey[li] || o.orderdate[oi] >= pr.q3_date {
                        continue;
                    }
                    for ci in 0..c.len() {
                        if c.custkey[ci] == o.custkey[oi] && c.mktsegment[ci] == pr.q3_segment {
                            n += 1;
                        }
                    }
                }
            }
            QueryId::Q10 => {
                if l.returnflag[li] != pr.q10_flag {
                    continue;
                }
                for oi in 0..o.len() {
                    let d = o.orderdate[oi];
                    if o.orderkey[oi] != l.orderkey[li] || d < pr.q10_from || d >= pr.q10_to {
                        continue;
                    }
                    for ci in 0..c.len() {
                        if c.custkey[ci] == o.custkey[oi] {
                            n += 1;
                        }
                    }
                }
            }
            QueryId::Q12 => {
                let mode = l.shipmode[li];
                let ok = (mode == pr.q12_modes[0] || mode == pr.q12_modes[1])
                    && l.commitdate[li] < l.receiptdate[li]
                    && l.shipdate[li] < l.commitdate[li]
                    && l.receiptdate[li] >= pr.q12_from
                    && l.receiptdate[li] < pr.q12_to;
                if ok {
                    n += (0..o.len())
                        .filter(|&oi| o.orderkey[oi] == l.orderkey[li])
                        .count() as u64;
                }
            }
            QueryId::Q19 => {
                let mode = l.shipmode[li];
                if !((mode == pr.q19_modes[0] || mode == pr.q19_modes[1])
                    && l.shipinstruct[li] == pr.q19_instruct)
                {
                    continue;
                }
                for pi in 0..p.len() {
                    if p.partkey[pi] != l.partkey[li] {
                        continue;
                    }
                    for g in &pr.q19_groups {
                        if p.brand[pi] == g.brand
                            && g.containers.contains(&p.container[pi])
                            && p.size[pi] >= 1
                            && p.size[pi] <= g.max_size
                            && l.quantity[li] >= g.quantity.0
                            && l.quantity[li] <= g.quantity.1
                        {
                            n += 1;
                        }
                    }
                }
            }
        }
    }
    n
}
