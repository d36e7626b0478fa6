//! TPC-H-shaped database with integer-only columns.
//!
//! Keys are dense (`1..=n`). Dates are days since 1970-01-01 and categorical
//! strings are codes into the dictionaries below. Values are drawn uniformly;
//! none of dbgen's skew or text columns are reproduced.
//!
//! | table    | rows             |
//! |----------|------------------|
//! | customer | 150 000 · SF     |
//! | orders   | 1 500 000 · SF   |
//! | lineitem | 1..=7 per order (≈ 6 000 000 · SF) |
//! | part     | 200 000 · SF     |

use super::rng;
use crate::error::{Error, Result};
use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

pub const MKTSEGMENT: &[&str] = &[
    "AUTOMOBILE",
    "BUILDING",
    "FURNITURE",
    "HOUSEHOLD",
    "MACHINERY",
];
pub const RETURNFLAG: &[&str] = &["A", "N", "R"];
pub const SHIPMODE: &[&str] = &["AIR", "FOB", "MAIL", "RAIL", "REG AIR", "SHIP", "TRUCK"];
pub const SHIPINSTRUCT: &[&str] = &[
    "COLLECT COD",
    "DELIVER IN PERSON",
    "NONE",
    "TAKE BACK RETURN",
];
const CONTAINER_SIZE: &[&str] = &["SM", "LG", "MED", "JUMBO", "WRAP"];
const CONTAINER_KIND: &[&str] = &["CASE", "BOX", "BAG", "JAR", "PKG", "PACK", "CAN", "DRUM"];

/// `Brand#MN` for M, N in 1..=5.
pub fn brands() -> &'static [String] {
    static BRANDS: OnceLock<Vec<String>> = OnceLock::new();
    BRANDS.get_or_init(|| {
        (1..=5)
            .flat_map(|m| (1..=5).map(move |n| format!("Brand#{m}{n}")))
            .collect()
    })
}

pub fn containers() -> &'static [String] {
    static CONTAINERS: OnceLock<Vec<String>> = OnceLock::new();
    CONTAINERS.get_or_init(|| {
        CONTAINER_SIZE
            .iter()
            .flat_map(|s| CONTAINER_KIND.iter().map(move |k| format!("{s} {k}")))
            .collect()
    })
}

fn lookup<S: AsRef<str>>(dict: &[S], value: &str) -> u32 {
    dict.iter()
        .position(|v| v.as_ref() == value)
        .unwrap_or_else(|| panic!("`{value}` is not in the dictionary")) as u32
}

pub fn mktsegment_code(v: &str) -> u32 {
    lookup(MKTSEGMENT, v)
}
pub fn returnflag_code(v: &str) -> u32 {
    lookup(RETURNFLAG, v)
}
pub fn shipmode_code(v: &str) -> u32 {
    lookup(SHIPMODE, v)
}
pub fn shipinstruct_code(v: &str) -> u32 {
    lookup(SHIPINSTRUCT, v)
}
pub fn brand_code(v: &str) -> u32 {
    lookup(brands(), v)
}
pub fn container_code(v: &str) -> u32 {
    lookup(containers(), v)
}

/// Days since 1970-01-01.
pub fn epoch_day(year: i32, month: u32, day: u32) -> u32 {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
    let date = NaiveDate::from_ymd_opt(year, month, day).expect("valid calendar date");
    date.signed_duration_since(epoch).num_days() as u32
}

/// First and last order date: 1992-01-01 ..= 1998-12-31.
pub fn order_date_range() -> (u32, u32) {
    (epoch_day(1992, 1, 1), epoch_day(1998, 12, 31))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CustomerTable {
    pub custkey: Vec<u32>,
    pub mktsegment: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OrdersTable {
    pub orderkey: Vec<u32>,
    pub custkey: Vec<u32>,
    pub orderdate: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LineitemTable {
    pub orderkey: Vec<u32>,
    pub partkey: Vec<u32>,
    pub quantity: Vec<u32>,
    pub shipdate: Vec<u32>,
    pub commitdate: Vec<u32>,
    pub receiptdate: Vec<u32>,
    pub returnflag: Vec<u32>,
    pub shipmode: Vec<u32>,
    pub shipinstruct: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PartTable {
    pub partkey: Vec<u32>,
    pub brand: Vec<u32>,
    pub container: Vec<u32>,
    pub size: Vec<u32>,
}

impl CustomerTable {
    pub fn len(&self) -> usize {
        self.custkey.len()
    }
    pub fn is_empty(&self) -> bool {
        self.custkey.is_empty()
    }
}
impl OrdersTable {
    pub fn len(&self) -> usize {
        self.orderkey.len()
    }
    pub fn is_empty(&self) -> bool {
        self.orderkey.is_empty()
    }
}
impl LineitemTable {
    pub fn len(&self) -> usize {
        self.orderkey.len()
    }
    pub fn is_empty(&self) -> bool {
        self.orderkey.is_empty()
    }
}
impl PartTable {
    pub fn len(&self) -> usize {
        self.partkey.len()
    }
    pub fn is_empty(&self) -> bool {
        self.partkey.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TpchLiteDb {
    pub scale_factor: f64,
    pub seed: u64,
    pub customer: CustomerTable,
    pub orders: OrdersTable,
    pub lineitem: LineitemTable,
    pub part: PartTable,
}

fn scaled(base: f64, sf: f64) -> u32 {
    ((base * sf).round() as u32).max(1)
}

pub fn generate_tpch_lite(scale_factor: f64, seed: u64) -> Result<TpchLiteDb> {
    if !(scale_factor.is_finite() && scale_factor > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "scale factor must be positive, got {scale_factor}"
        )));
    }
    let n_customer = scaled(150_000.0, scale_factor);
    let n_orders = scaled(1_500_000.0, scale_factor);
    let n_part = scaled(200_000.0, scale_factor);
    let mut rng = rng(seed);

    let customer = CustomerTable {
        custkey: (1..=n_customer).collect(),
        mktsegment: (0..n_customer)
            .map(|_| rng.gen_range(0..MKTSEGMENT.len() as u32))
            .collect(),
    };

    let (first_day, last_day) = order_date_range();
    let mut orders = OrdersTable {
        orderkey: (1..=n_orders).collect(),
        custkey: Vec::with_capacity(n_orders as usize),
        orderdate: Vec::with_capacity(n_orders as usize),
    };
    for _ in 0..n_orders {
        orders.custkey.push(rng.gen_range(1..=n_customer));
        orders.orderdate.push(rng.gen_range(first_day..=last_day));
    }

    let mut lineitem = LineitemTable::default();
    for (&orderkey, &orderdate) in orders.orderkey.iter().zip(&orders.orderdate) {
        let lines = rng.gen_range(1..=7);
        for _ in 0..lines {
            let shipdate = orderdate + rng.gen_range(1..=121);
            lineitem.orderkey.push(orderkey);
            lineitem.partkey.push(rng.gen_range(1..=n_part));
            lineitem.quantity.push(rng.gen_range(1..=50));
            lineitem.shipdate.push(shipdate);
            lineitem.commitdate.push(orderdate + rng.gen_range(30..=90));
            lineitem.receiptdate.push(shipdate + rng.gen_range(1..=30));
            lineitem
                .returnflag
                .push(rng.gen_range(0..RETURNFLAG.len() as u32));
            lineitem
                .shipmode
                .push(rng.gen_range(0..SHIPMODE.len() as u32));
            lineitem
                .shipinstruct
                .push(rng.gen_range(0..SHIPINSTRUCT.len() as u32));
        }
    }

    let part = PartTable {
        partkey: (1..=n_part).collect(),
        brand: (0..n_part)
            .map(|_| rng.gen_range(0..brands().len() as u32))
            .collect(),
        container: (0..n_part)
            .map(|_| rng.gen_range(0..containers().len() as u32))
            .collect(),
        size: (0..n_part).map(|_| rng.gen_range(1..=50)).collect(),
    };

    Ok(TpchLiteDb {
        scale_factor,
        seed,
        customer,
        orders,
        lineitem,
        part,
    })
}

const COLUMN_MAGIC: &[u8; 8] = b"OLAPCOL1";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnEntry {
    pub table: String,
    pub column: String,
    pub rows: u64,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scale_factor: f64,
    pub seed: u64,
    pub columns: Vec<ColumnEntry>,
}

fn dict(values: &[impl AsRef<str>]) -> Option<Vec<String>> {
    Some(values.iter().map(|v| v.as_ref().to_string()).collect())
}

/// Table, column name, values, and the dictionary of coded string columns.
type ColumnRef<'a> = (
    &'static str,
    &'static str,
    &'a Vec<u32>,
    Option<Vec<String>>,
);

impl TpchLiteDb {
    fn columns(&self) -> Vec<ColumnRef<'_>> {
        let c = &self.customer;
        let o = &self.orders;
        let l = &self.lineitem;
        let p = &self.part;
        vec![
            ("customer", "custkey", &c.custkey, None),
            ("customer", "mktsegment", &c.mktsegment, dict(MKTSEGMENT)),
            ("orders", "orderkey", &o.orderkey, None),
            ("orders", "custkey", &o.custkey, None),
            ("orders", "orderdate", &o.orderdate, None),
            ("lineitem", "orderkey", &l.orderkey, None),
            ("lineitem", "partkey", &l.partkey, None),
            ("lineitem", "quantity", &l.quantity, None),
            ("lineitem", "shipdate", &l.shipdate, None),
            ("lineitem", "commitdate", &l.commitdate, None),
            ("lineitem", "receiptdate", &l.receiptdate, None),
            ("lineitem", "returnflag", &l.returnflag, dict(RETURNFLAG)),
            ("lineitem", "shipmode", &l.shipmode, dict(SHIPMODE)),
            (
                "lineitem",
                "shipinstruct",
                &l.shipinstruct,
                dict(SHIPINSTRUCT),
            ),
            ("part", "partkey", &p.partkey, None),
            ("part", "brand", &p.brand, dict(brands())),
            ("part", "container", &p.container, dict(containers())),
            ("part", "size", &p.size, None),
        ]
    }

    fn column_mut(&mut self, table: &str, column: &str) -> Option<&mut Vec<u32>> {
        let c = &mut self.customer;
        let o = &mut self.orders;
        let l = &mut self.lineitem;
        let p = &mut self.part;
        Some(match (table, column) {
            ("customer", "custkey") => &mut c.custkey,
            ("customer", "mktsegment") => &mut c.mktsegment,
            ("orders", "orderkey") => &mut o.orderkey,
            ("orders", "custkey") => &mut o.custkey,
            ("orders", "orderdate") => &mut o.orderdate,
            ("lineitem", "orderkey") => &mut l.orderkey,
            ("lineitem", "partkey") => &mut l.partkey,
            ("lineitem", "quantity") => &mut l.quantity,
            ("lineitem", "shipdate") => &mut l.shipdate,
            ("lineitem", "commitdate") => &mut l.commitdate,
            ("lineitem", "receiptdate") => &mut l.receiptdate,
            ("lineitem", "returnflag") => &mut l.returnflag,
            ("lineitem", "shipmode") => &mut l.shipmode,
            ("lineitem", "shipinstruct") => &mut l.shipinstruct,
            ("part", "partkey") => &mut p.partkey,
            ("part", "brand") => &mut p.brand,
            ("part", "container") => &mut p.container,
            ("part", "size") => &mut p.size,
            _ => return None,
        })
    }

    /// Writes one `<table>.<column>.col` file per column plus `manifest.json`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<Manifest> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for (table, column, values, dictionary) in self.columns() {
            let file = format!("{table}.{column}.col");
            let mut w = BufWriter::new(File::create(dir.join(&file))?);
            w.write_all(COLUMN_MAGIC)?;
            w.write_all(&(values.len() as u64).to_le_bytes())?;
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
            w.flush()?;
            entries.push(ColumnEntry {
                table: table.into(),
                column: column.into(),
                rows: values.len() as u64,
                file,
                dictionary,
            });
        }
        let manifest = Manifest {
            scale_factor: self.scale_factor,
            seed: self.seed,
            columns: entries,
        };
        std::fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest)
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<TpchLiteDb> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.join(MANIFEST))?)?;
        let mut db = TpchLiteDb {
            scale_factor: manifest.scale_factor,
            seed: manifest.seed,
            ..Default::default()
        };
        for entry in &manifest.columns {
            let mut r = BufReader::new(File::open(dir.join(&entry.file))?);
            let mut header = [0u8; 16];
            r.read_exact(&mut header)
                .map_err(|_| Error::Format(format!("{}: truncated header", entry.file)))?;
            if &header[..8] != COLUMN_MAGIC {
                return Err(Error::Format(format!("{}: bad column magic", entry.file)));
            }
            let rows = u64::from_le_bytes(header[8..].try_into().unwrap());
            if rows != entry.rows {
                return Err(Error::Format(format!(
                    "{}: manifest says {} rows, file says {rows}",
                    entry.file, entry.rows
                )));
            }
            let mut bytes = Vec::with_capacity(rows as usize * 4);
            r.read_to_end(&mut bytes)?;
            if bytes.len() as u64 != rows * 4 {
                return Err(Error::Format(format!("{}: truncated column", entry.file)));
            }
            let values = bytes
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let slot = db.column_mut(&entry.table, &entry.column).ok_or_else(|| {
                Error::Format(format!("unknown column {}.{}", entry.table, entry.column))
            })?;
            *slot = values;
        }
        Ok(db)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn dictionary_sizes() {
        assert_eq!(MKTSEGMENT.len(), 5);
        assert_eq!(RETURNFLAG.len(), 3);
        assert_eq!(SHIPMODE.len(), 7);
        assert_eq!(brands().len(), 25);
        assert_eq!(containers().len(), 40);
        assert_eq!(brand_code("Brand#12"), 1);
        assert_eq!(containers()[container_code("MED PKG") as usize], "MED PKG");
    }

    #[test]
    fn epoch_days() {
        assert_eq!(epoch_day(1970, 1, 1), 0);
        assert_eq!(epoch_day(1992, 1, 1), 8035);
        let (a, b) = order_date_range();
        assert_eq!(b - a + 1, 365 * 7 + 2);
    }

    #[test]
    fn linear_scaling() {
        let db = generate_tpch_lite(0.01, 1).unwrap();
        assert_eq!(db.customer.len(), 1500);
        assert_eq!(db.orders.len(), 15_000);
        assert_eq!(db.part.len(), 2000);
        let li = db.lineitem.len() as f64;
        assert!((li / 60_000.0 - 1.0).abs() < 0.03, "{li}");
    }

    #[test]
    fn rejects_non_positive_scale() {
        assert!(generate_tpch_lite(0.0, 1).is_err());
        assert!(generate_tpch_lite(-1.0, 1).is_err());
    }

    #[test]
    fn foreign_keys_closed() {
        let db = generate_tpch_lite(0.1, 7).unwrap();
        let customers: HashSet<u32> = db.customer.custkey.iter().copied().collect();
        let orders: HashSet<u32> = db.orders.orderkey.iter().copied().collect();
        let parts: HashSet<u32> = db.part.partkey.iter().copied().collect();
        assert!(db.orders.custkey.iter().all(|k| customers.contains(k)));
        assert!(db.lineitem.orderkey.iter().all(|k| orders.contains(k)));
        assert!(db.lineitem.partkey.iter().all(|k| parts.contains(k)));
    }

    #[test]
    fn two_of_seven_shipmodes() {
        let db = generate_tpch_lite(0.1, 3).unwrap();
        let mail = shipmode_code("MAIL");
        let ship = shipmode_code("SHIP");
        let hits = db
            .lineitem
            .shipmode
            .iter()
            .filter(|&&m| m == mail || m == ship)
            .count();
        let frac = hits as f64 / db.lineitem.len() as f64;
        assert!((frac - 2.0 / 7.0).abs() <= 0.01, "{frac}");
    }

    #[test]
    fn dates_are_ordered() {
        let db = generate_tpch_lite(0.01, 5).unwrap();
        let l = &db.lineitem;
        for i in 0..l.len() {
            assert!(l.receiptdate[i] > l.shipdate[i]);
        }
        let (a, b) = order_date_range();
        assert!(db.orders.orderdate.iter().all(|d| (a..=b).contains(d)));
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            generate_tpch_lite(0.002, 9).unwrap(),
            generate_tpch_lite(0.002, 9).unwrap()
        );
    }

    #[test]
    fn dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let db = generate_tpch_lite(0.001, 4).unwrap();
        let manifest = db.write_dir(dir.path()).unwrap();
        assert_eq!(manifest.columns.len(), 18);
        let shipmode = manifest
            .columns
            .iter()
            .find(|c| c.column == "shipmode")
            .unwrap();
        assert_eq!(shipmode.dictionary.as_ref().unwrap().len(), 7);
        assert_eq!(TpchLiteDb::read_dir(dir.path()).unwrap(), db);
    }
}
