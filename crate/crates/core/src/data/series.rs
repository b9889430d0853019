//! CSV series I/O.
//!
//! Series files have one row per item and time step with columns `item_id`,
//! `t`, `z`, an optional `availability` (1 when absent), any number of
//! `feature_<name>` columns and `season_<name>` calendar columns holding an
//! atomic seasonal index. An empty `z` marks an unobserved day.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::forecast::ForecastSamples;
use crate::issm::TimeRange;

/// One item's contiguous series.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemSeries {
    pub item_id: String,
    pub start: i64,
    pub z: Vec<Option<f64>>,
    pub availability: Vec<f64>,
    /// Row-major `len × num_features`.
    pub features: Vec<f64>,
    pub calendar: BTreeMap<String, Vec<usize>>,
}

impl ItemSeries {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn num_features(&self) -> usize {
        if self.z.is_empty() {
            0
        } else {
            self.features.len() / self.z.len()
        }
    }

    /// Time range with the calendar columns attached.
    pub fn range(&self) -> Result<TimeRange> {
        let mut r = TimeRange::new(self.start, self.len());
        for (name, values) in &self.calendar {
            r = r.with_column(name.clone(), values.clone())?;
        }
        Ok(r)
    }

    /// Steps `[from, from + len)`.
    pub fn slice(&self, from: usize, len: usize) -> Result<ItemSeries> {
        if from + len > self.len() {
            return Err(Error::Range(format!(
                "slice [{from}, {}) beyond series {} of length {}",
                from + len,
                self.item_id,
                self.len()
            )));
        }
        let p = self.num_features();
        Ok(ItemSeries {
            item_id: self.item_id.clone(),
            start: self.start + from as i64,
            z: self.z[from..from + len].to_vec(),
            availability: self.availability[from..from + len].to_vec(),
            features: self.features[from * p..(from + len) * p].to_vec(),
            calendar: self
                .calendar
                .iter()
                .map(|(k, v)| (k.clone(), v[from..from + len].to_vec()))
                .collect(),
        })
    }

    /// Targets with unobserved days as 0.
    pub fn targets_or_zero(&self) -> Vec<f64> {
        self.z.iter().map(|z| z.unwrap_or(0.0)).collect()
    }
}

/// All series of a file with the shared column names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeriesSet {
    pub feature_names: Vec<String>,
    pub calendar_names: Vec<String>,
    pub items: BTreeMap<String, ItemSeries>,
}

impl SeriesSet {
    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }
}

struct Columns {
    item: usize,
    t: usize,
    z: usize,
    availability: Option<usize>,
    features: Vec<usize>,
    calendar: Vec<usize>,
}

fn columns(headers: &csv::StringRecord) -> Result<(Columns, Vec<String>, Vec<String>)> {
    let find = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| {
        find(name).ok_or_else(|| Error::DataLine {
            line: 1,
            msg: format!("missing column {name}"),
        })
    };
    let mut feature_names = Vec::new();
    let mut calendar_names = Vec::new();
    let mut features = Vec::new();
    let mut calendar = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if let Some(n) = h.strip_prefix("feature_") {
            feature_names.push(n.to_string());
            features.push(i);
        } else if let Some(n) = h.strip_prefix("season_") {
            calendar_names.push(n.to_string());
            calendar.push(i);
        }
    }
    Ok((
        Columns {
            item: need("item_id")?,
            t: need("t")?,
            z: need("z")?,
            availability: find("availability"),
            features,
            calendar,
        },
        feature_names,
        calendar_names,
    ))
}

struct Row {
    line: usize,
    t: i64,
    z: Option<f64>,
    availability: f64,
    features: Vec<f64>,
    calendar: Vec<usize>,
}

fn parse<T: std::str::FromStr>(s: &str, what: &str, line: usize) -> Result<T> {
    s.trim().parse().map_err(|_| Error::DataLine {
        line,
        msg: format!("cannot parse {what} from {s:?}"),
    })
}

/// Parses a series CSV. Rows may come in any order; each item's `t` must be
/// contiguous once sorted.
pub fn read_series<R: Read>(reader: R) -> Result<SeriesSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let (cols, feature_names, calendar_names) = columns(&headers)?;
    let mut rows: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let z_text = field(cols.z);
        let z = if z_text.is_empty() {
            None
        } else {
            let z: f64 = parse(z_text, "z", line)?;
            if !z.is_finite() || z < 0.0 {
                return Err(Error::DataLine {
                    line,
                    msg: format!("target must be finite and nonnegative, got {z}"),
                });
            }
            Some(z)
        };
        let availability = match cols.availability.map(field) {
            None | Some("") => 1.0,
            Some(s) => {
                let a: f64 = parse(s, "availability", line)?;
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::DataLine {
                        line,
                        msg: format!("availability must lie in [0, 1], got {a}"),
                    });
                }
                a
            }
        };
        let features = cols
            .features
            .iter()
            .map(|&i| parse(field(i), "feature", line))
            .collect::<Result<Vec<f64>>>()?;
        let calendar = cols
            .calendar
            .iter()
            .map(|&i| parse(field(i), "season index", line))
            .collect::<Result<Vec<usize>>>()?;
        rows.entry(field(cols.item).to_string())
            .or_default()
            .push(Row {
                line,
                t: parse(field(cols.t), "t", line)?,
                z,
                availability,
                features,
                calendar,
            });
    }

    let mut items = BTreeMap::new();
    for (id, mut rs) in rows {
        rs.sort_by_key(|r| r.t);
        for w in rs.windows(2) {
            if w[1].t != w[0].t + 1 {
                let bad = if w[1].t == w[0].t {
                    w[1].line.max(w[0].line)
                } else {
                    w[1].line
                };
                return Err(Error::DataLine {
                    line: bad,
                    msg: format!("item {id}: t jumps from {} to {}", w[0].t, w[1].t),
                });
            }
        }
        let mut calendar: BTreeMap<String, Vec<usize>> = calendar_names
            .iter()
            .map(|n| (n.clone(), Vec::with_capacity(rs.len())))
            .collect();
        for r in &rs {
            for (n, v) in calendar_names.iter().zip(&r.calendar) {
                calendar.get_mut(n).unwrap().push(*v);
            }
        }
        items.insert(
            id.clone(),
            ItemSeries {
                item_id: id,
                start: rs[0].t,
                z: rs.iter().map(|r| r.z).collect(),
                availability: rs.iter().map(|r| r.availability).collect(),
                features: rs.iter().flat_map(|r| r.features.iter().copied()).collect(),
                calendar,
            },
        );
    }
    Ok(SeriesSet {
        feature_names,
        calendar_names,
        items,
    })
}

pub fn load_series(path: &Path) -> Result<SeriesSet> {
    let f = std::fs::File::open(path)?;
    read_series(std::io::BufReader::new(f))
}

pub fn write_series<W: Write>(set: &SeriesSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "item_id".to_string(),
        "t".into(),
        "z".into(),
        "availability".into(),
    ];
    header.extend(set.feature_names.iter().map(|n| format!("feature_{n}")));
    header.extend(set.calendar_names.iter().map(|n| format!("season_{n}")));
    w.write_record(&header)?;
    let p = set.num_features();
    for item in set.items.values() {
        for i in 0..item.len() {
            let mut rec = vec![
                item.item_id.clone(),
                (item.start + i as i64).to_string(),
                item.z[i].map_or(String::new(), |z| z.to_string()),
                item.availability[i].to_string(),
            ];
            rec.extend(
                item.features[i * p..(i + 1) * p]
                    .iter()
                    .map(|v| v.to_string()),
            );
            rec.extend(
                set.calendar_names
                    .iter()
                    .map(|n| item.calendar[n][i].to_string()),
            );
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_series(set: &SeriesSet, path: &Path) -> Result<()> {
    write_series(set, std::fs::File::create(path)?)
}

/// Writes samples as `item_id, path, t, z`.
pub fn write_samples<'a, W: Write>(
    samples: impl IntoIterator<Item = (&'a str, &'a ForecastSamples)>,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["item_id", "path", "t", "z"])?;
    for (id, s) in samples {
        for (p, path) in s.paths.iter().enumerate() {
            for (i, z) in path.iter().enumerate() {
                w.write_record([
                    id.to_string(),
                    p.to_string(),
                    (s.start + i as i64).to_string(),
                    z.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads samples written by [`write_samples`].
pub fn read_samples<R: Read>(reader: R) -> Result<BTreeMap<String, ForecastSamples>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut raw: BTreeMap<String, BTreeMap<usize, Vec<(i64, f64)>>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 4 {
            return Err(Error::DataLine {
                line,
                msg: "expected item_id, path, t, z".into(),
            });
        }
        let path: usize = parse(&rec[1], "path", line)?;
        let t: i64 = parse(&rec[2], "t", line)?;
        let z: f64 = parse(&rec[3], "z", line)?;
        raw.entry(rec[0].to_string())
            .or_default()
            .entry(path)
            .or_default()
            .push((t, z));
    }
    let mut out = BTreeMap::new();
    for (id, paths) in raw {
        let mut start = None;
        let mut horizon = None;
        let mut vals = Vec::with_capacity(paths.len());
        for (_, mut steps) in paths {
            steps.sort_by_key(|s| s.0);
            let s0 = steps[0].0;
            if steps.iter().enumerate().any(|(i, s)| s.0 != s0 + i as i64)
                || start.is_some_and(|s| s != s0)
                || horizon.is_some_and(|h| h != steps.len())
            {
                return Err(Error::Data(format!(
                    "item {id}: sample paths are not aligned"
                )));
            }
            start = Some(s0);
            horizon = Some(steps.len());
            vals.push(steps.into_iter().map(|s| s.1).collect());
        }
        out.insert(
            id,
            ForecastSamples {
                start: start.unwrap(),
                horizon: horizon.unwrap(),
                paths: vals,
            },
        );
    }
    Ok(out)
}

/// One row of the quantile output.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuantileRow {
    pub item_id: String,
    pub lead: usize,
    pub span: usize,
    pub rho: f64,
    pub value: f64,
}

pub fn write_quantiles<W: Write>(rows: &[QuantileRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
