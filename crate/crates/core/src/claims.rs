//! Transactional claims ledger, period discretization and triangles.
//!
//! A [`Dataset`] always holds the claim history as known at its
//! `max_calendar_period`. Truncating a dataset at a boundary produces the
//! view an insurer would have had at that calendar period: later
//! transactions disappear and claims settling afterwards become open.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when deciding that a CAS claim has paid out its
/// full claim size.
const CAS_SETTLED_RTOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TxnType {
    Mi,
    Ma,
    P,
    PMi,
    PMa,
    None,
}

impl TxnType {
    pub fn is_payment(self) -> bool {
        matches!(self, TxnType::P | TxnType::PMi | TxnType::PMa)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TxnType::Mi => "Mi",
            TxnType::Ma => "Ma",
            TxnType::P => "P",
            TxnType::PMi => "PMi",
            TxnType::PMa => "PMa",
            TxnType::None => "None",
        }
    }

    fn flag(self) -> u8 {
        match self {
            TxnType::Mi => 1,
            TxnType::Ma => 1 << 1,
            TxnType::P => 1 << 2,
            TxnType::PMi => 1 << 3,
            TxnType::PMa => 1 << 4,
            TxnType::None => 0,
        }
    }
}

impl FromStr for TxnType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "Mi" => Ok(TxnType::Mi),
            "Ma" => Ok(TxnType::Ma),
            "P" => Ok(TxnType::P),
            "PMi" => Ok(TxnType::PMi),
            "PMa" => Ok(TxnType::PMa),
            "" | "None" | "NA" => Ok(TxnType::None),
            other => Err(format!("unknown transaction type `{other}`")),
        }
    }
}

/// Set of transaction types observed within one development period.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TxnFlags(u8);

impl TxnFlags {
    pub const ORDER: [TxnType; 5] = [
        TxnType::Mi,
        TxnType::Ma,
        TxnType::P,
        TxnType::PMi,
        TxnType::PMa,
    ];

    pub fn empty() -> Self {
        TxnFlags(0)
    }

    pub fn insert(&mut self, t: TxnType) {
        self.0 |= t.flag();
    }

    pub fn contains(self, t: TxnType) -> bool {
        t.flag() != 0 && self.0 & t.flag() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn has_payment(self) -> bool {
        Self::ORDER
            .iter()
            .any(|t| t.is_payment() && self.contains(*t))
    }

    /// One-hot encoding in [`TxnFlags::ORDER`].
    pub fn one_hot(self) -> [f64; 5] {
        let mut out = [0.0; 5];
        for (slot, t) in out.iter_mut().zip(Self::ORDER) {
            if self.contains(t) {
                *slot = 1.0;
            }
        }
        out
    }
}

impl fmt::Display for TxnFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = Self::ORDER
            .iter()
            .filter(|t| self.contains(**t))
            .map(|t| t.as_str())
            .collect();
        write!(f, "{}", names.join("|"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    Splice,
    Cas,
}

impl FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "splice" => Ok(Schema::Splice),
            "cas" => Ok(Schema::Cas),
            other => Err(Error::Config(format!("unknown schema `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeriodUnit {
    Year,
    Quarter,
}

impl FromStr for PeriodUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "year" => Ok(PeriodUnit::Year),
            "quarter" => Ok(PeriodUnit::Quarter),
            other => Err(Error::Config(format!("unknown period unit `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub claim_no: u64,
    pub txn_time: f64,
    pub txn_type: TxnType,
    pub incurred: Option<f64>,
    pub case_ocl: Option<f64>,
    pub cumpaid: f64,
    pub accident_period: u32,
    pub claim_size: f64,
}

impl Transaction {
    pub fn period(&self) -> u32 {
        period_of(self.txn_time)
    }
}

/// Calendar period containing continuous time `t`, using half-open
/// intervals `(p - 1, p]`.
pub fn period_of(t: f64) -> u32 {
    let p = t.ceil();
    if p < 1.0 {
        1
    } else {
        p as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevelopmentRecord {
    /// Development period since accident, `j = t + 1 - i`.
    pub dev_period: u32,
    pub calendar_period: u32,
    pub cum_paid: f64,
    pub txn_types: TxnFlags,
    pub n_pay: u32,
    pub case: Option<f64>,
    /// Ultimate minus cumulative paid; only known for settled claims.
    pub true_ocl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub claim_no: u64,
    pub accident_period: u32,
    pub notification_time: f64,
    pub notification_period: u32,
    pub settlement_period: Option<u32>,
    pub repdel: u32,
    pub claim_size: f64,
    pub transactions: Vec<Transaction>,
    pub dev_records: Vec<DevelopmentRecord>,
}

impl Claim {
    pub fn is_settled(&self) -> bool {
        self.settlement_period.is_some()
    }

    pub fn is_settled_by(&self, t: u32) -> bool {
        self.settlement_period.is_some_and(|s| s <= t)
    }

    /// Cumulative paid at settlement, in payment-period dollars.
    pub fn ultimate(&self) -> Option<f64> {
        self.settlement_period
            .map(|_| self.transactions.last().map_or(0.0, |t| t.cumpaid))
    }

    pub fn calendar_of(&self, dev_period: u32) -> u32 {
        self.accident_period + dev_period - 1
    }

    pub fn record_at_calendar(&self, t: u32) -> Option<&DevelopmentRecord> {
        let first = self.dev_records.first()?.calendar_period;
        if t < first {
            return None;
        }
        self.dev_records.get((t - first) as usize)
    }

    /// Cumulative paid at the end of calendar period `t` (zero before
    /// notification, final cumulative paid after the last record).
    pub fn paid_at_calendar(&self, t: u32) -> f64 {
        match self.dev_records.first() {
            None => 0.0,
            Some(first) if t < first.calendar_period => 0.0,
            Some(_) => match self.record_at_calendar(t) {
                Some(r) => r.cum_paid,
                None => self.dev_records.last().map_or(0.0, |r| r.cum_paid),
            },
        }
    }

    pub fn last_calendar_period(&self) -> u32 {
        self.dev_records
            .last()
            .map_or(self.notification_period, |r| r.calendar_period)
    }

    /// Periods since notification, `tau`, at calendar period `t`.
    pub fn psn_at(&self, t: u32) -> u32 {
        t + 1 - self.notification_period
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub dropped_zero_loss: usize,
    pub dropped_unsettled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub claims: Vec<Claim>,
    pub period_unit: PeriodUnit,
    pub max_calendar_period: u32,
    pub stats: IngestStats,
}

impl Dataset {
    pub fn empty(period_unit: PeriodUnit) -> Self {
        Dataset {
            claims: Vec::new(),
            period_unit,
            max_calendar_period: 0,
            stats: IngestStats::default(),
        }
    }

    /// Groups transactions by claim, validates them and populates the
    /// development records. `valuation` caps the observation horizon; when
    /// absent it is the latest transaction period.
    pub fn from_transactions(
        txns: Vec<Transaction>,
        schema: Schema,
        period_unit: PeriodUnit,
        valuation: Option<u32>,
    ) -> Result<Self> {
        let mut grouped: BTreeMap<u64, Vec<Transaction>> = BTreeMap::new();
        for t in txns {
            grouped.entry(t.claim_no).or_default().push(t);
        }
        let horizon = valuation.unwrap_or_else(|| {
            grouped
                .values()
                .flat_map(|v| v.iter().map(Transaction::period))
                .max()
                .unwrap_or(0)
        });

        let mut stats = IngestStats::default();
        let mut claims = Vec::with_capacity(grouped.len());
        for (claim_no, mut txns) in grouped {
            txns.sort_by(|a, b| a.txn_time.total_cmp(&b.txn_time));
            validate_claim(claim_no, &txns)?;
            if schema == Schema::Cas {
                infer_cas_types(&mut txns);
            }
            let final_paid = txns.last().map_or(0.0, |t| t.cumpaid);
            let claim_size = txns[0].claim_size;
            let settled = match schema {
                Schema::Splice => txns
                    .last()
                    .is_some_and(|t| t.case_ocl.is_some_and(|o| o == 0.0)),
                Schema::Cas => {
                    if claim_size <= 0.0 || final_paid <= 0.0 {
                        stats.dropped_zero_loss += 1;
                        continue;
                    }
                    let ok = (final_paid - claim_size).abs() <= CAS_SETTLED_RTOL * claim_size;
                    if !ok {
                        stats.dropped_unsettled += 1;
                        continue;
                    }
                    true
                }
            };
            claims.push(build_claim(claim_no, txns, settled, horizon)?);
        }
        Ok(Dataset {
            claims,
            period_unit,
            max_calendar_period: horizon,
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.claims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }

    pub fn claim(&self, claim_no: u64) -> Option<&Claim> {
        self.claims
            .binary_search_by_key(&claim_no, |c| c.claim_no)
            .ok()
            .map(|i| &self.claims[i])
    }

    pub fn transactions(&self) -> impl Iterator<Item = &Transaction> {
        self.claims.iter().flat_map(|c| c.transactions.iter())
    }

    /// The dataset as known at the end of calendar period `boundary`.
    pub fn truncate_at(&self, boundary: u32) -> Dataset {
        let claims = self
            .claims
            .iter()
            .filter(|c| c.notification_period <= boundary)
            .map(|c| {
                let mut claim = c.clone();
                claim.transactions.retain(|t| t.period() <= boundary);
                claim.settlement_period = c.settlement_period.filter(|s| *s <= boundary);
                rebuild_records(&mut claim, boundary);
                claim
            })
            .collect();
        Dataset {
            claims,
            period_unit: self.period_unit,
            max_calendar_period: boundary,
            stats: self.stats.clone(),
        }
    }

    /// Subset keeping the claims for which `keep` holds.
    pub fn filter(&self, mut keep: impl FnMut(&Claim) -> bool) -> Dataset {
        Dataset {
            claims: self.claims.iter().filter(|c| keep(c)).cloned().collect(),
            period_unit: self.period_unit,
            max_calendar_period: self.max_calendar_period,
            stats: self.stats.clone(),
        }
    }

    /// SPLICE-schema CSV export of every transaction.
    pub fn write_transactions_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(SPLICE_COLUMNS).map_err(csv_err)?;
        for t in self.transactions() {
            wtr.write_record([
                t.claim_no.to_string(),
                t.claim_size.to_string(),
                t.txn_time.to_string(),
                t.txn_type.as_str().to_string(),
                opt_num(t.incurred),
                opt_num(t.case_ocl),
                t.cumpaid.to_string(),
                t.accident_period.to_string(),
            ])
            .map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<writer>", e))?;
        Ok(())
    }

    /// CAS-schema CSV export. The claim size column carries the settled
    /// ultimate so that a re-read recognises settled claims.
    pub fn write_cas_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(CAS_COLUMNS).map_err(csv_err)?;
        for c in &self.claims {
            let size = c.ultimate().unwrap_or(c.claim_size);
            for t in &c.transactions {
                wtr.write_record([
                    t.claim_no.to_string(),
                    size.to_string(),
                    t.txn_time.to_string(),
                    t.cumpaid.to_string(),
                    t.accident_period.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<writer>", e))?;
        Ok(())
    }

    pub fn write_dev_records_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "claim_no", "ap", "dp", "cum_paid", "n_pay", "case", "types", "true_ocl",
        ])
        .map_err(csv_err)?;
        for c in &self.claims {
            for r in &c.dev_records {
                wtr.write_record([
                    c.claim_no.to_string(),
                    c.accident_period.to_string(),
                    r.dev_period.to_string(),
                    r.cum_paid.to_string(),
                    r.n_pay.to_string(),
                    opt_num(r.case),
                    r.txn_types.to_string(),
                    opt_num(r.true_ocl),
                ])
                .map_err(csv_err)?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<writer>", e))?;
        Ok(())
    }
}

const SPLICE_COLUMNS: [&str; 8] = [
    "claim_no",
    "claim_size",
    "txn_time",
    "txn_type",
    "incurred",
    "OCL",
    "cumpaid",
    "accident_period",
];
const CAS_COLUMNS: [&str; 5] = [
    "claim_no",
    "claim_size",
    "txn_time",
    "cumpaid",
    "accident_period",
];

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}

/// Reads a transaction file and builds a discretized dataset.
pub fn load_transactions(path: &Path, schema: Schema, unit: PeriodUnit) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_transactions(file, schema, unit)
}

pub fn read_transactions<R: Read>(reader: R, schema: Schema, unit: PeriodUnit) -> Result<Dataset> {
    let txns = parse_transactions(reader, schema)?;
    Dataset::from_transactions(txns, schema, unit, None)
}

pub fn parse_transactions<R: Read>(reader: R, schema: Schema) -> Result<Vec<Transaction>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let wanted: &[&str] = match schema {
        Schema::Splice => &SPLICE_COLUMNS,
        Schema::Cas => &CAS_COLUMNS,
    };
    let mut idx = Vec::with_capacity(wanted.len());
    for col in wanted {
        let pos = headers.iter().position(|h| h == *col).ok_or_else(|| Error::Parse {
            row: 0,
            message: format!("missing column `{col}`"),
        })?;
        idx.push(pos);
    }

    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        // header is row 1
        let row = n + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            let s = field(k);
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                row,
                message: format!("column `{}`: bad number `{s}`", wanted[k]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("column `{}` not finite", wanted[k]),
                });
            }
            Ok(v)
        };
        let opt = |k: usize| -> Result<Option<f64>> {
            let s = field(k);
            if s.is_empty() || s == "NA" {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let int = |k: usize| -> Result<u64> {
            let s = field(k);
            s.parse::<u64>()
                .or_else(|_| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.fract() == 0.0 && *v >= 0.0)
                        .map(|v| v as u64)
                        .ok_or(())
                })
                .map_err(|_| Error::Parse {
                    row,
                    message: format!("column `{}`: bad integer `{s}`", wanted[k]),
                })
        };
        let t = match schema {
            Schema::Splice => Transaction {
                claim_no: int(0)?,
                claim_size: num(1)?,
                txn_time: num(2)?,
                txn_type: field(3).parse().map_err(|m| Error::Parse { row, message: m })?,
                incurred: opt(4)?,
                case_ocl: opt(5)?,
                cumpaid: num(6)?,
                accident_period: int(7)? as u32,
            },
            Schema::Cas => Transaction {
                claim_no: int(0)?,
                claim_size: num(1)?,
                txn_time: num(2)?,
                txn_type: TxnType::None,
                incurred: None,
                case_ocl: None,
                cumpaid: num(3)?,
                accident_period: int(4)? as u32,
            },
        };
        if t.accident_period == 0 {
            return Err(Error::Parse {
                row,
                message: "accident_period must be >= 1".into(),
            });
        }
        out.push(t);
    }
    Ok(out)
}

fn validate_claim(claim_no: u64, txns: &[Transaction]) -> Result<()> {
    let ap = txns[0].accident_period;
    let mut prev = 0.0_f64;
    for t in txns {
        if t.accident_period != ap {
            return Err(Error::Integrity {
                claim_no,
                message: "accident period changes within claim".into(),
            });
        }
        if t.cumpaid < 0.0 {
            return Err(Error::Integrity {
                claim_no,
                message: "negative cumulative paid".into(),
            });
        }
        if t.cumpaid < prev {
            return Err(Error::Integrity {
                claim_no,
                message: format!("cumpaid decreases from {prev} to {}", t.cumpaid),
            });
        }
        prev = t.cumpaid;
    }
    if period_of(txns[0].txn_time) < ap {
        return Err(Error::Integrity {
            claim_no,
            message: "notified before its accident period".into(),
        });
    }
    Ok(())
}

fn infer_cas_types(txns: &mut [Transaction]) {
    let mut prev = 0.0;
    for t in txns {
        t.txn_type = if t.cumpaid > prev {
            TxnType::P
        } else {
            TxnType::None
        };
        prev = t.cumpaid;
    }
}

fn build_claim(claim_no: u64, txns: Vec<Transaction>, settled: bool, horizon: u32) -> Result<Claim> {
    let first = &txns[0];
    let ap = first.accident_period;
    let notification_time = first.txn_time;
    let notification_period = period_of(notification_time);
    let last_period = txns.last().map_or(notification_period, Transaction::period);
    let settlement_period = settled.then_some(last_period);
    let mut claim = Claim {
        claim_no,
        accident_period: ap,
        notification_time,
        notification_period,
        settlement_period,
        repdel: notification_time.ceil() as u32 - ap,
        claim_size: first.claim_size,
        transactions: txns,
        dev_records: Vec::new(),
    };
    rebuild_records(&mut claim, horizon.max(last_period));
    Ok(claim)
}

/// Populates one record per period from notification to settlement, or to
/// `horizon` for open claims. Periods without transactions carry the
/// previous record forward with an empty type set.
pub fn rebuild_records(claim: &mut Claim, horizon: u32) {
    let end = claim.settlement_period.unwrap_or(horizon);
    let ultimate = claim.ultimate();
    let mut records = Vec::with_capacity((end + 1).saturating_sub(claim.notification_period) as usize);
    let mut k = 0;
    let mut cum_paid = 0.0;
    let mut n_pay = 0;
    let mut case = None;
    for t in claim.notification_period..=end {
        let mut types = TxnFlags::empty();
        while k < claim.transactions.len() && claim.transactions[k].period() <= t {
            let txn = &claim.transactions[k];
            types.insert(txn.txn_type);
            if txn.txn_type.is_payment() {
                n_pay += 1;
            }
            cum_paid = txn.cumpaid;
            if txn.case_ocl.is_some() {
                case = txn.case_ocl;
            }
            k += 1;
        }
        records.push(DevelopmentRecord {
            dev_period: t + 1 - claim.accident_period,
            calendar_period: t,
            cum_paid,
            txn_types: types,
            n_pay,
            case,
            true_ocl: ultimate.map(|u| (u - cum_paid).max(0.0)),
        });
    }
    claim.dev_records = records;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriangleKind {
    CumPaid,
    CumCount,
    Ppci,
}

/// Cumulative triangle indexed by accident period `i` and development
/// period `j` (both 1-based), with cells present for `i + j - 1 <= T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    pub kind: TriangleKind,
    pub valuation: u32,
    rows: Vec<Vec<f64>>,
}

impl Triangle {
    /// Builds a triangle from explicit rows; row `i` must have
    /// `valuation - i + 1` cells.
    pub fn from_rows(kind: TriangleKind, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyTriangle);
        }
        let t = rows.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != t - i {
                return Err(Error::Dimension {
                    expected: t - i,
                    got: r.len(),
                });
            }
        }
        Ok(Triangle {
            kind,
            valuation: t as u32,
            rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: u32, j: u32) -> Option<f64> {
        if i == 0 || j == 0 {
            return None;
        }
        self.rows.get(i as usize - 1)?.get(j as usize - 1).copied()
    }

    pub fn row(&self, i: u32) -> &[f64] {
        &self.rows[i as usize - 1]
    }

    /// Latest observed development column for accident period `i`.
    pub fn latest_column(&self, i: u32) -> u32 {
        self.valuation - i + 1
    }

    pub fn latest(&self, i: u32) -> f64 {
        *self.row(i).last().expect("rows are non-empty")
    }
}

/// Aggregates the dataset into a cumulative triangle at valuation `t`.
pub fn build_triangle(dataset: &Dataset, kind: TriangleKind, valuation: u32, settled_only: bool) -> Result<Triangle> {
    if dataset.is_empty() || valuation == 0 {
        return Err(Error::EmptyTriangle);
    }
    let n = valuation as usize;
    let mut paid: Vec<Vec<f64>> = (0..n).map(|i| vec![0.0; n - i]).collect();
    let mut count: Vec<Vec<f64>> = paid.clone();
    for c in &dataset.claims {
        let i = c.accident_period;
        if i > valuation || (settled_only && !c.is_settled_by(valuation)) {
            continue;
        }
        let row = (i - 1) as usize;
        for j in 1..=(valuation - i + 1) {
            let t = i + j - 1;
            if c.notification_period <= t {
                paid[row][(j - 1) as usize] += c.paid_at_calendar(t);
                count[row][(j - 1) as usize] += 1.0;
            }
        }
    }
    let rows = match kind {
        TriangleKind::CumPaid => paid,
        TriangleKind::CumCount => count,
        TriangleKind::Ppci => paid
            .iter()
            .zip(&count)
            .map(|(p, n)| {
                p.iter()
                    .zip(n)
                    .map(|(p, n)| if *n == 0.0 { 0.0 } else { p / n })
                    .collect()
            })
            .collect(),
    };
    Ok(Triangle {
        kind,
        valuation,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn txn(claim_no: u64, time: f64, ty: TxnType, cumpaid: f64, ap: u32, ocl: Option<f64>) -> Transaction {
        Transaction {
            claim_no,
            txn_time: time,
            txn_type: ty,
            incurred: ocl.map(|o| o + cumpaid),
            case_ocl: ocl,
            cumpaid,
            accident_period: ap,
            claim_size: 15.0,
        }
    }

    #[test]
    fn single_payment_row_loads_one_claim() {
        let csv = "claim_no,claim_size,txn_time,txn_type,incurred,OCL,cumpaid,accident_period\n\
                   1,100,1.5,P,100,0,100,1\n";
        let ds = read_transactions(csv.as_bytes(), Schema::Splice, PeriodUnit::Quarter).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.claims[0].transactions.len(), 1);
        assert_eq!(ds.claims[0].settlement_period, Some(2));
    }

    #[test]
    fn decreasing_cumpaid_is_integrity_error() {
        let csv = "claim_no,claim_size,txn_time,txn_type,incurred,OCL,cumpaid,accident_period\n\
                   7,100,1.5,P,100,50,50,1\n\
                   7,100,2.5,P,100,0,40,1\n";
        let err = read_transactions(csv.as_bytes(), Schema::Splice, PeriodUnit::Quarter).unwrap_err();
        match err {
            Error::Integrity { claim_no, .. } => assert_eq!(claim_no, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let csv = "claim_no,claim_size,txn_time,txn_type,incurred,OCL,cumpaid,accident_period\n\
                   1,100,1.5,P,100,0,100,1\n\
                   2,abc,1.5,P,100,0,100,1\n";
        match read_transactions(csv.as_bytes(), Schema::Splice, PeriodUnit::Quarter).unwrap_err() {
            Error::Parse { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn boundary_time_belongs_to_earlier_period() {
        assert_eq!(period_of(2.0), 2);
        assert_eq!(period_of(2.0000001), 3);
        assert_eq!(period_of(1.2), 2);
        assert_eq!(period_of(1.8), 2);
    }

    #[test]
    fn same_bucket_transactions_share_a_record() {
        let txns = vec![
            txn(1, 1.2, TxnType::P, 5.0, 1, Some(10.0)),
            txn(1, 1.8, TxnType::PMi, 8.0, 1, Some(7.0)),
            txn(1, 3.5, TxnType::P, 15.0, 1, Some(0.0)),
        ];
        let ds = Dataset::from_transactions(txns, Schema::Splice, PeriodUnit::Quarter, None).unwrap();
        let c = &ds.claims[0];
        assert_eq!(c.dev_records.len(), 3);
        let r = &c.dev_records[0];
        assert_eq!(r.calendar_period, 2);
        assert!(r.txn_types.contains(TxnType::P) && r.txn_types.contains(TxnType::PMi));
        assert_eq!(r.n_pay, 2);
        assert_eq!(r.cum_paid, 8.0);
    }

    #[test]
    fn interior_gap_is_carried_forward() {
        // notified in 1, nothing in 2, settles in 3
        let txns = vec![
            txn(4, 0.5, TxnType::P, 5.0, 1, Some(10.0)),
            txn(4, 2.5, TxnType::P, 15.0, 1, Some(0.0)),
        ];
        let ds = Dataset::from_transactions(txns, Schema::Splice, PeriodUnit::Quarter, None).unwrap();
        let recs = &ds.claims[0].dev_records;
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].dev_period, 2);
        assert_eq!(recs[1].cum_paid, 5.0);
        assert!(recs[1].txn_types.is_empty());
        assert_eq!(recs[1].n_pay, 1);
        assert_eq!(recs[1].case, Some(10.0));
        assert_eq!(recs[1].true_ocl, Some(10.0));
        assert_eq!(recs[2].true_ocl, Some(0.0));
    }

    #[test]
    fn cas_types_inferred_from_cumpaid() {
        let csv = "claim_no,claim_size,txn_time,cumpaid,accident_period\n\
                   1,30,1,0,1\n1,30,2,10,1\n1,30,3,10,1\n1,30,4,30,1\n\
                   2,0,1,0,1\n\
                   3,50,2,10,2\n";
        let ds = read_transactions(csv.as_bytes(), Schema::Cas, PeriodUnit::Year).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.stats.dropped_zero_loss, 1);
        assert_eq!(ds.stats.dropped_unsettled, 1);
        let types: Vec<TxnType> = ds.claims[0].transactions.iter().map(|t| t.txn_type).collect();
        assert_eq!(types, vec![TxnType::None, TxnType::P, TxnType::None, TxnType::P]);
        assert!(ds.claims[0].dev_records.iter().all(|r| r.case.is_none()));
    }

    #[test]
    fn truncation_reopens_later_settlers() {
        let txns = vec![
            txn(1, 0.5, TxnType::P, 5.0, 1, Some(10.0)),
            txn(1, 4.5, TxnType::P, 15.0, 1, Some(0.0)),
            txn(2, 3.5, TxnType::P, 15.0, 3, Some(0.0)),
        ];
        let ds = Dataset::from_transactions(txns, Schema::Splice, PeriodUnit::Quarter, None).unwrap();
        let cut = ds.truncate_at(3);
        assert_eq!(cut.len(), 1);
        let c = &cut.claims[0];
        assert!(!c.is_settled());
        assert_eq!(c.dev_records.len(), 3);
        assert!(c.dev_records.iter().all(|r| r.true_ocl.is_none()));
        assert_eq!(cut.max_calendar_period, 3);
    }

    #[test]
    fn paid_triangle_single_claim() {
        let txns = vec![
            txn(1, 0.5, TxnType::P, 10.0, 1, Some(5.0)),
            txn(1, 1.5, TxnType::P, 15.0, 1, Some(0.0)),
        ];
        let ds = Dataset::from_transactions(txns, Schema::Splice, PeriodUnit::Quarter, None).unwrap();
        let tri = build_triangle(&ds, TriangleKind::CumPaid, 2, false).unwrap();
        assert_eq!(tri.row(1), &[10.0, 15.0]);
    }

    #[test]
    fn count_triangle_increments_at_notification() {
        let txns = vec![
            txn(1, 0.5, TxnType::P, 15.0, 1, Some(0.0)),
            txn(2, 2.5, TxnType::P, 15.0, 1, Some(0.0)),
        ];
        let ds = Dataset::from_transactions(txns, Schema::Splice, PeriodUnit::Quarter, None).unwrap();
        let tri = build_triangle(&ds, TriangleKind::CumCount, 3, false).unwrap();
        // manual count: claim 1 notified in dev 1, claim 2 in dev 3
        assert_eq!(tri.row(1), &[1.0, 1.0, 2.0]);
        assert_eq!(tri.row(2), &[0.0, 0.0]);
        let ppci = build_triangle(&ds, TriangleKind::Ppci, 3, false).unwrap();
        assert_eq!(ppci.row(2), &[0.0, 0.0]);
        assert_eq!(ppci.row(1), &[15.0, 15.0, 15.0]);
    }

    #[test]
    fn empty_dataset_triangle_errors() {
        let ds = Dataset::empty(PeriodUnit::Quarter);
        assert!(matches!(
            build_triangle(&ds, TriangleKind::CumPaid, 3, false),
            Err(Error::EmptyTriangle)
        ));
    }
}
