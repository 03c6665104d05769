//! Bid-log ingestion, trimmed one-hot vocabularies, and dataset splits.
//!
//! A log line is tab-separated:
//!
//! ```text
//! won(0|1) \t bid_price \t winning_price (empty if lost) \t field=value;field=value;...
//! ```
//!
//! Column 0 of every encoding is an always-on bias feature. Each field owns an
//! "other" column that collects attributes seen fewer than `trim_threshold`
//! times in the data the vocabulary was built from, plus anything unseen.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Index of the bias column.
pub const BIAS_INDEX: u32 = 0;

/// Attribute name used for a field's catch-all column in vocabulary files.
pub const OTHER_ATTRIBUTE: &str = "__other__";

/// One auction as it appears in a bid log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub fields: Vec<(String, String)>,
    pub bid_price: u32,
    pub won: bool,
    pub winning_price: Option<u32>,
}

impl RawRecord {
    pub fn new(
        fields: Vec<(String, String)>,
        bid_price: u32,
        winning_price: Option<u32>,
    ) -> Result<Self> {
        let record = Self {
            fields,
            bid_price,
            won: winning_price.is_some(),
            winning_price,
        };
        record.validate(0)?;
        Ok(record)
    }

    fn validate(&self, line: usize) -> Result<()> {
        let malformed = |reason: String| Error::MalformedRecord { line, reason };
        match (self.won, self.winning_price) {
            (true, None) => return Err(malformed("won record without winning price".into())),
            (false, Some(_)) => return Err(malformed("lost record with winning price".into())),
            (true, Some(w)) if w > self.bid_price => {
                return Err(malformed(format!(
                    "winning price {w} exceeds bid {}",
                    self.bid_price
                )))
            }
            _ => {}
        }
        let mut seen = BTreeSet::new();
        for (field, _) in &self.fields {
            if !seen.insert(field.as_str()) {
                return Err(malformed(format!("duplicate field {field}")));
            }
        }
        Ok(())
    }

    /// Parses one log line; `line` is only used for diagnostics.
    pub fn parse_line(text: &str, line: usize) -> Result<Self> {
        let malformed = |reason: String| Error::MalformedRecord { line, reason };
        let cols: Vec<&str> = text.trim_end_matches(['\r', '\n']).split('\t').collect();
        if cols.len() != 4 {
            return Err(malformed(format!(
                "expected 4 tab-separated columns, got {}",
                cols.len()
            )));
        }
        let won = match cols[0] {
            "1" => true,
            "0" => false,
            other => return Err(malformed(format!("won flag must be 0 or 1, got {other:?}"))),
        };
        let bid_price = cols[1]
            .parse::<u32>()
            .map_err(|_| malformed(format!("bad bid price {:?}", cols[1])))?;
        let winning_price = if cols[2].is_empty() {
            None
        } else {
            Some(
                cols[2]
                    .parse::<u32>()
                    .map_err(|_| malformed(format!("bad winning price {:?}", cols[2])))?,
            )
        };
        let mut fields = Vec::new();
        for pair in cols[3].split(';').filter(|p| !p.is_empty()) {
            let (field, value) = pair
                .split_once('=')
                .ok_or_else(|| malformed(format!("feature {pair:?} is not field=value")))?;
            if field.is_empty() {
                return Err(malformed(format!(
                    "feature {pair:?} has an empty field name"
                )));
            }
            fields.push((field.to_string(), value.to_string()));
        }
        let record = Self {
            fields,
            bid_price,
            won,
            winning_price,
        };
        record.validate(line)?;
        Ok(record)
    }

    pub fn to_line(&self) -> String {
        let features: Vec<String> = self
            .fields
            .iter()
            .map(|(f, v)| format!("{f}={v}"))
            .collect();
        format!(
            "{}\t{}\t{}\t{}",
            u8::from(self.won),
            self.bid_price,
            self.winning_price
                .map(|w| w.to_string())
                .unwrap_or_default(),
            features.join(";")
        )
    }
}

pub fn parse_log(text: &str) -> Result<Vec<RawRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| RawRecord::parse_line(l, i + 1))
        .collect()
}

pub fn read_log(path: &Path) -> Result<Vec<RawRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_log(&text)
}

pub fn format_log(records: &[RawRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// Fraction of records that won.
pub fn win_rate(records: &[RawRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.won).count() as f64 / records.len() as f64
}

/// Edge lists for numeric fields. A value `v` lands in bin `i` where `i` is
/// the number of edges `<= v`; the attribute becomes `bin<i>`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    edges: BTreeMap<String, Vec<f64>>,
}

impl BinSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_field(mut self, field: impl Into<String>, mut edges: Vec<f64>) -> Result<Self> {
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument("bin edges must be finite".into()));
        }
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        self.edges.insert(field.into(), edges);
        Ok(self)
    }

    /// Parses `Field=e1,e2,...;Other=...`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::new();
        for item in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (field, list) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bin spec {item:?} is not field=edges")))?;
            let edges = list
                .split(',')
                .map(|e| {
                    e.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad bin edge {e:?} for {field}")))
                })
                .collect::<Result<Vec<_>>>()?;
            spec = spec.with_field(field.trim(), edges)?;
        }
        Ok(spec)
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    fn render(&self) -> String {
        self.edges
            .iter()
            .map(|(f, e)| {
                let list: Vec<String> = e.iter().map(|v| v.to_string()).collect();
                format!("{f}={}", list.join(","))
            })
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Maps a raw attribute through the field's bins; non-binned fields pass through.
    /// `None` means the field is binned but the value is not numeric.
    pub fn apply<'a>(&self, field: &str, value: &'a str) -> Option<std::borrow::Cow<'a, str>> {
        match self.edges.get(field) {
            None => Some(std::borrow::Cow::Borrowed(value)),
            Some(edges) => {
                let v: f64 = value.trim().parse().ok().filter(|v: &f64| v.is_finite())?;
                let bin = edges.partition_point(|e| *e <= v);
                Some(std::borrow::Cow::Owned(format!("bin{bin}")))
            }
        }
    }
}

/// Trimmed one-hot vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    index_of: BTreeMap<(String, String), u32>,
    other_bins: BTreeMap<String, u32>,
    dimension: usize,
    trim_threshold: u64,
    binning: BinSpec,
}

type Counts = HashMap<(String, String), u64>;

fn count_records(records: &[RawRecord], binning: &BinSpec) -> Result<Counts> {
    records
        .par_iter()
        .enumerate()
        .try_fold(Counts::new, |mut acc, (i, r)| {
            r.validate(i + 1)?;
            for (field, value) in &r.fields {
                let attr = binning
                    .apply(field, value)
                    .ok_or_else(|| Error::MalformedRecord {
                        line: i + 1,
                        reason: format!("non-numeric value {value:?} for binned field {field}"),
                    })?;
                *acc.entry((field.clone(), attr.into_owned())).or_insert(0) += 1;
            }
            Ok(acc)
        })
        .try_reduce(Counts::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            Ok(a)
        })
}

/// Builds a vocabulary from the records it will be trained on.
pub fn build_vocabulary(
    records: &[RawRecord],
    trim_threshold: u64,
    binning: &BinSpec,
) -> Result<Vocabulary> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let counts = count_records(records, binning)?;

    let mut by_field: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for ((field, attr), &n) in &counts {
        let kept = by_field.entry(field.as_str()).or_default();
        if n >= trim_threshold {
            kept.push(attr.as_str());
        }
    }

    let mut index_of = BTreeMap::new();
    let mut other_bins = BTreeMap::new();
    let mut next = BIAS_INDEX + 1;
    for (field, mut attrs) in by_field {
        other_bins.insert(field.to_string(), next);
        next += 1;
        attrs.sort_unstable();
        for attr in attrs {
            index_of.insert((field.to_string(), attr.to_string()), next);
            next += 1;
        }
    }
    Ok(Vocabulary {
        index_of,
        other_bins,
        dimension: next as usize,
        trim_threshold,
        binning: binning.clone(),
    })
}

impl Vocabulary {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn trim_threshold(&self) -> u64 {
        self.trim_threshold
    }

    pub fn binning(&self) -> &BinSpec {
        &self.binning
    }

    pub fn index(&self, field: &str, attribute: &str) -> Option<u32> {
        self.index_of
            .get(&(field.to_string(), attribute.to_string()))
            .copied()
    }

    pub fn other_index(&self, field: &str) -> Option<u32> {
        self.other_bins.get(field).copied()
    }

    pub fn fields(&self) -> impl Iterator<Item = &str> {
        self.other_bins.keys().map(String::as_str)
    }

    /// Kept attributes of one field, in column order.
    pub fn attributes(&self, field: &str) -> Vec<&str> {
        self.index_of
            .iter()
            .filter(|((f, _), _)| f == field)
            .map(|((_, a), _)| a.as_str())
            .collect()
    }

    /// Column that `field=value` activates, if the field is known.
    pub fn column(&self, field: &str, value: &str) -> Option<u32> {
        let other = self.other_index(field)?;
        Some(match self.binning.apply(field, value) {
            Some(attr) => self.index(field, &attr).unwrap_or(other),
            None => other,
        })
    }

    /// Encodes a record. Fields absent from the vocabulary contribute nothing;
    /// unseen or trimmed attributes use the field's other column.
    pub fn encode(&self, record: &RawRecord) -> Observation {
        let mut active = Vec::with_capacity(record.fields.len() + 1);
        active.push(BIAS_INDEX);
        active.extend(record.fields.iter().filter_map(|(f, v)| self.column(f, v)));
        active.sort_unstable();
        active.dedup();
        Observation {
            x: FeatureVector {
                active,
                dimension: self.dimension,
            },
            bid_price: record.bid_price,
            won: record.won,
            winning_price: record.winning_price,
        }
    }

    pub fn encode_all(&self, records: &[RawRecord]) -> Vec<Observation> {
        records.par_iter().map(|r| self.encode(r)).collect()
    }

    /// Text form: `dimension \t trim_threshold`, optional `#bins \t spec`, then
    /// `field \t attribute \t index` rows in index order.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<(u32, &str, &str)> = self
            .index_of
            .iter()
            .map(|((f, a), &i)| (i, f.as_str(), a.as_str()))
            .chain(
                self.other_bins
                    .iter()
                    .map(|(f, &i)| (i, f.as_str(), OTHER_ATTRIBUTE)),
            )
            .collect();
        rows.sort_unstable();
        let mut out = format!("{}\t{}\n", self.dimension, self.trim_threshold);
        if !self.binning.is_empty() {
            let _ = writeln!(out, "#bins\t{}", self.binning.render());
        }
        for (i, f, a) in rows {
            let _ = writeln!(out, "{f}\t{a}\t{i}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, reason: String| Error::MalformedRecord { line, reason };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.is_empty());
        let (_, header) = lines.next().ok_or(Error::NoRecords)?;
        let (dim, trim) = header
            .split_once('\t')
            .ok_or_else(|| bad(1, "header must be dimension<TAB>trim_threshold".into()))?;
        let dimension: usize = dim
            .parse()
            .map_err(|_| bad(1, format!("bad dimension {dim:?}")))?;
        let trim_threshold: u64 = trim
            .parse()
            .map_err(|_| bad(1, format!("bad trim threshold {trim:?}")))?;

        let mut binning = BinSpec::new();
        let mut index_of = BTreeMap::new();
        let mut other_bins = BTreeMap::new();
        let mut seen = vec![false; dimension];
        if dimension == 0 {
            return Err(bad(1, "dimension must be positive".into()));
        }
        seen[BIAS_INDEX as usize] = true;
        for (n, line) in lines {
            if let Some(spec) = line.strip_prefix("#bins\t") {
                binning = BinSpec::parse(spec)?;
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad(n + 1, "expected field<TAB>attribute<TAB>index".into()));
            }
            let index: u32 = cols[2]
                .parse()
                .map_err(|_| bad(n + 1, "bad index".into()))?;
            let slot = seen
                .get_mut(index as usize)
                .ok_or_else(|| bad(n + 1, "index out of range".into()))?;
            if std::mem::replace(slot, true) {
                return Err(bad(n + 1, format!("index {index} assigned twice")));
            }
            if cols[1] == OTHER_ATTRIBUTE {
                other_bins.insert(cols[0].to_string(), index);
            } else {
                index_of.insert((cols[0].to_string(), cols[1].to_string()), index);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(bad(0, "indices do not cover 0..dimension".into()));
        }
        if let Some((f, _)) = index_of.keys().find(|(f, _)| !other_bins.contains_key(f)) {
            return Err(bad(0, format!("field {f} has no other column")));
        }
        Ok(Self {
            index_of,
            other_bins,
            dimension,
            trim_threshold,
            binning,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Hex digest of the text form; model files pin the vocabulary they were trained on.
    pub fn checksum(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest
            .iter()
            .take(16)
            .fold(String::with_capacity(32), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }
}

/// Sparse one-hot vector: strictly increasing active column indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub active: Vec<u32>,
    pub dimension: usize,
}

impl FeatureVector {
    pub fn new(mut active: Vec<u32>, dimension: usize) -> Result<Self> {
        active.sort_unstable();
        active.dedup();
        if let Some(&last) = active.last() {
            if last as usize >= dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    got: last as usize + 1,
                });
            }
        }
        Ok(Self { active, dimension })
    }

    /// Σ_j v[j] over active columns.
    #[inline]
    pub fn dot(&self, v: &[f64]) -> f64 {
        self.active.iter().map(|&j| v[j as usize]).sum()
    }
}

/// An encoded auction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: FeatureVector,
    pub bid_price: u32,
    pub won: bool,
    pub winning_price: Option<u32>,
}

/// Train/validation/test sizes for `n` items.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::InvalidArgument(
            "split ratios must be nonnegative".into(),
        ));
    }
    if (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios sum to {}",
            a + b + c
        )));
    }
    let train = ((n as f64) * a).round() as usize;
    let valid = (((n as f64) * b).round() as usize).min(n - train);
    Ok((train, valid, n - train - valid))
}

/// Shuffled index partition for `n` items.
pub fn split_indices(
    n: usize,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let (train, valid, _) = split_sizes(n, ratios)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(train + valid);
    let valid_part = idx.split_off(train);
    Ok((idx, valid_part, test))
}

/// Splits `data` into (train, valid, test) with a seeded shuffle.
pub fn split_dataset<T: Clone>(
    data: &[T],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (a, b, c) = split_indices(data.len(), ratios, seed)?;
    let pick = |ix: Vec<usize>| ix.into_iter().map(|i| data[i].clone()).collect();
    Ok((pick(a), pick(b), pick(c)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(city: &str) -> RawRecord {
        RawRecord::new(vec![("City".into(), city.into())], 10, None).unwrap()
    }

    #[test]
    fn no_trimming_keeps_every_attribute() {
        let v = build_vocabulary(&[rec("A"), rec("A"), rec("B")], 0, &BinSpec::new()).unwrap();
        assert_eq!(v.attributes("City"), vec!["A", "B"]);
        assert!(v.other_index("City").is_some());
        assert_eq!(v.dimension(), 4);
    }

    #[test]
    fn rare_attribute_collapses_into_other() {
        let v = build_vocabulary(&[rec("A"), rec("A"), rec("B")], 2, &BinSpec::new()).unwrap();
        assert_eq!(v.attributes("City"), vec!["A"]);
        let o = v.encode(&rec("B"));
        assert!(o.x.active.contains(&v.other_index("City").unwrap()));
    }

    #[test]
    fn encode_lookup_unseen_and_bias() {
        let v = build_vocabulary(&[rec("A"), rec("B")], 0, &BinSpec::new()).unwrap();
        let a = v.encode(&rec("A"));
        assert_eq!(a.x.active, vec![BIAS_INDEX, v.index("City", "A").unwrap()]);
        let z = v.encode(&rec("Z"));
        assert_eq!(z.x.active, vec![BIAS_INDEX, v.other_index("City").unwrap()]);
    }

    #[test]
    fn empty_and_malformed_inputs() {
        assert!(matches!(
            build_vocabulary(&[], 0, &BinSpec::new()),
            Err(Error::NoRecords)
        ));
        let dup = RawRecord {
            fields: vec![("City".into(), "A".into()), ("City".into(), "B".into())],
            bid_price: 5,
            won: false,
            winning_price: None,
        };
        let err = build_vocabulary(&[dup], 0, &BinSpec::new()).unwrap_err();
        assert!(err.to_string().contains("malformed record"), "{err}");
    }

    #[test]
    fn numeric_fields_are_binned() {
        let bins = BinSpec::parse("SlotWidth=200,400").unwrap();
        let mk = |w: &str| RawRecord::new(vec![("SlotWidth".into(), w.into())], 1, None).unwrap();
        let v = build_vocabulary(&[mk("100"), mk("300"), mk("400"), mk("728")], 0, &bins).unwrap();
        assert_eq!(v.attributes("SlotWidth"), vec!["bin0", "bin1", "bin2"]);
        assert_eq!(
            v.encode(&mk("250")).x.active[1],
            v.index("SlotWidth", "bin1").unwrap()
        );
        assert_eq!(
            v.encode(&mk("wide")).x.active[1],
            v.other_index("SlotWidth").unwrap()
        );
        assert!(build_vocabulary(&[mk("wide")], 0, &bins).is_err());
    }

    #[test]
    fn log_line_parsing() {
        let r = RawRecord::parse_line("1\t300\t77\tCity=A;Region=x=y", 1).unwrap();
        assert!(r.won);
        assert_eq!(r.winning_price, Some(77));
        assert_eq!(r.fields[1], ("Region".into(), "x=y".into()));
        assert_eq!(RawRecord::parse_line(&r.to_line(), 1).unwrap(), r);
        assert!(RawRecord::parse_line("1\t30\t77\tCity=A", 3).is_err());
        assert!(RawRecord::parse_line("0\t30\t7\tCity=A", 3).is_err());
        assert!(RawRecord::parse_line("1\t30\t\tCity=A", 3).is_err());
        assert!(RawRecord::parse_line("0\t30\t", 3).is_err());
        assert!(RawRecord::parse_line("0\t30\t\tCity=A;City=B", 3).is_err());
    }

    #[test]
    fn vocabulary_text_round_trip() {
        let bins = BinSpec::parse("H=50,250").unwrap();
        let recs = vec![
            RawRecord::new(
                vec![("City".into(), "A".into()), ("H".into(), "90".into())],
                3,
                Some(1),
            )
            .unwrap(),
            RawRecord::new(vec![("City".into(), "B".into())], 3, None).unwrap(),
        ];
        let v = build_vocabulary(&recs, 0, &bins).unwrap();
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.checksum(), v.checksum());
        let other = build_vocabulary(&recs[1..], 0, &bins).unwrap();
        assert_ne!(other.checksum(), v.checksum());
    }

    #[test]
    fn split_examples() {
        let data: Vec<u32> = (0..10).collect();
        let (a, b, c) = split_dataset(&data, (0.6, 0.2, 0.2), 7).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
        assert_eq!(split_dataset(&data, (0.6, 0.2, 0.2), 7).unwrap(), (a, b, c));
        assert!(split_dataset(&data, (0.6, 0.2, 0.3), 7).is_err());
        assert!(split_dataset::<u32>(&[], (0.6, 0.2, 0.2), 7).is_err());
    }

    #[test]
    fn split_sizes_at_session_scale() {
        let n = 53_289_330usize;
        let (a, b, c) = split_sizes(n, (0.6, 0.2, 0.2)).unwrap();
        assert_eq!(a + b + c, n);
        for (got, r) in [(a, 0.6), (b, 0.2), (c, 0.2)] {
            assert!((got as f64 - r * n as f64).abs() <= 1.0);
        }
    }
}
