//! Price panels: CSV ingestion, export and synthetic generators.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Error;

/// How ingestion treats empty cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    #[default]
    Reject,
    /// Copy the previous value into interior gaps. Gaps on the first row
    /// still reject.
    ForwardFill,
}

impl MissingPolicy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "reject" => Some(MissingPolicy::Reject),
            "forward-fill" | "forward_fill" => Some(MissingPolicy::ForwardFill),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MissingPolicy::Reject => "reject",
            MissingPolicy::ForwardFill => "forward-fill",
        }
    }
}

/// Dated closes for `n` tickers, row-major `T × n`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceFrame {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    values: Vec<f64>,
}

impl PriceFrame {
    pub fn new(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self, Error> {
        let n = tickers.len();
        if n == 0 || dates.is_empty() {
            return Err(Error::Data(
                "frame needs at least one date and one ticker".into(),
            ));
        }
        if values.len() != dates.len() * n {
            return Err(Error::Data(format!(
                "{} values for {} dates × {n} tickers",
                values.len(),
                dates.len()
            )));
        }
        for w in dates.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Data(format!("duplicate date {}", w[1])));
            }
            if w[0] > w[1] {
                return Err(Error::Data(format!("date {} follows {}", w[1], w[0])));
            }
        }
        if let Some(k) = values.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Data(format!(
                "non-positive price {} for {} on {}",
                values[k],
                tickers[k % n],
                dates[k / n]
            )));
        }
        Ok(Self {
            dates,
            tickers,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n(&self) -> usize {
        self.tickers.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.n();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(i)
            .step_by(self.n())
            .copied()
            .collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.column(i)).collect()
    }

    /// Rows `range` as a new frame.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<PriceFrame, Error> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::InsufficientData(format!(
                "rows {}..{} of a {}-row frame",
                range.start,
                range.end,
                self.len()
            )));
        }
        let n = self.n();
        Ok(PriceFrame {
            dates: self.dates[range.clone()].to_vec(),
            tickers: self.tickers.clone(),
            values: self.values[range.start * n..range.end * n].to_vec(),
        })
    }
}

fn parse_date(s: &str) -> Result<NaiveDate, Error> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|_| Error::Data(format!("invalid ISO-8601 date {s:?}")))
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | "null")
}

/// Reads `date,<ticker>...` CSV.
pub fn ingest<R: Read>(reader: R, policy: MissingPolicy) -> Result<PriceFrame, Error> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0).map(str::trim) != Some("date") || header.len() < 2 {
        return Err(Error::Data("header must be `date,<ticker1>,...`".into()));
    }
    let tickers: Vec<String> = header
        .iter()
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    let n = tickers.len();
    let mut dates = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() != n + 1 {
            return Err(Error::Data(format!(
                "row {} has {} fields, expected {}",
                dates.len() + 1,
                record.len(),
                n + 1
            )));
        }
        let date = parse_date(&record[0])?;
        if let Some(&prev) = dates.last() {
            if date == prev {
                return Err(Error::Data(format!("duplicate date {date}")));
            }
            if date < prev {
                return Err(Error::Data(format!("date {date} follows {prev}")));
            }
        }
        for (i, cell) in record.iter().skip(1).enumerate() {
            let v = if is_missing(cell) {
                match (policy, dates.is_empty()) {
                    (_, true) => {
                        return Err(Error::Data(format!(
                            "leading gap for {} on {date}",
                            tickers[i]
                        )))
                    }
                    (MissingPolicy::Reject, false) => {
                        return Err(Error::Data(format!(
                            "missing value for {} on {date}",
                            tickers[i]
                        )))
                    }
                    (MissingPolicy::ForwardFill, false) => values[values.len() - n],
                }
            } else {
                cell.trim().parse::<f64>().map_err(|_| {
                    Error::Data(format!(
                        "invalid number {cell:?} for {} on {date}",
                        tickers[i]
                    ))
                })?
            };
            values.push(v);
        }
        dates.push(date);
    }
    PriceFrame::new(dates, tickers, values)
}

pub fn ingest_path(path: &Path, policy: MissingPolicy) -> Result<PriceFrame, Error> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    ingest(std::io::BufReader::new(file), policy)
}

/// Writes a frame in the format read by [`ingest`], with round-trip values.
pub fn write_frame<W: Write>(frame: &PriceFrame, out: W) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["date".to_string()];
    header.extend(frame.tickers.iter().cloned());
    w.write_record(&header)?;
    for t in 0..frame.len() {
        let mut rec = vec![frame.dates[t].format("%Y-%m-%d").to_string()];
        rec.extend(frame.row(t).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Synthetic panel families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    /// AR(1) log returns with a shared shock component.
    Ar1Panel,
    /// Log returns alternating between AR(1) and AR(2) segments.
    RegimeSwitch,
    /// One asset drifts upward, the others drift down.
    DominantAsset,
}

impl SynthKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ar1_panel" => Some(SynthKind::Ar1Panel),
            "regime_switch" => Some(SynthKind::RegimeSwitch),
            "dominant_asset" => Some(SynthKind::DominantAsset),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Ar1Panel => "ar1_panel",
            SynthKind::RegimeSwitch => "regime_switch",
            SynthKind::DominantAsset => "dominant_asset",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub series: usize,
    pub steps: usize,
    /// AR(1) coefficient of returns.
    pub phi: f64,
    /// AR(2) coefficients used by the second regime.
    pub phi2: (f64, f64),
    /// Segment length of each regime.
    pub segment: usize,
    /// Innovation standard deviation of log returns.
    pub sigma: f64,
    /// Share of innovation variance common to all series.
    pub common: f64,
    /// Per-step log drift of the leading asset (dominant panel).
    pub drift: f64,
    pub start_price: f64,
    pub start_date: NaiveDate,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            series: 4,
            steps: 1000,
            phi: 0.9,
            phi2: (0.2, 0.7),
            segment: 250,
            sigma: 0.005,
            common: 0.5,
            drift: 0.002,
            start_price: 100.0,
            start_date: NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date"),
        }
    }
}

impl SynthParams {
    fn validate(&self, kind: SynthKind) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.series == 0 || self.steps < 2 {
            return bad("synthetic panel needs series ≥ 1 and steps ≥ 2");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) || !(0.0..=1.0).contains(&self.common) {
            return bad("sigma must be ≥ 0 and common in [0, 1]");
        }
        if !(self.start_price > 0.0) {
            return bad("start price must be positive");
        }
        match kind {
            SynthKind::Ar1Panel if self.phi.abs() >= 1.0 => bad("phi must lie in (-1, 1)"),
            SynthKind::RegimeSwitch => {
                let (a1, a2) = self.phi2;
                if self.segment == 0 {
                    bad("segment length must be positive")
                } else if self.phi.abs() >= 1.0
                    || a2.abs() >= 1.0
                    || a1 + a2 >= 1.0
                    || a2 - a1 >= 1.0
                {
                    bad("regime coefficients must be stationary")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Business days (Monday to Friday) starting at `start`.
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

/// Which regime generated step `t` of a regime-switching panel: 1 or 2.
pub fn regime_order(t: usize, segment: usize) -> usize {
    if (t / segment).is_multiple_of(2) {
        1
    } else {
        2
    }
}

/// Deterministic synthetic panel; log returns are returned alongside prices.
pub fn synth_returns(kind: SynthKind, p: &SynthParams, seed: u64) -> Result<Vec<f64>, Error> {
    p.validate(kind)?;
    let (n, steps) = (p.series, p.steps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let (wc, wi) = (p.common.sqrt(), (1.0 - p.common).sqrt());
    // `steps - 1` returns between `steps` prices.
    let mut r = vec![0.0; (steps - 1) * n];
    for t in 0..steps - 1 {
        let shared = draw();
        for i in 0..n {
            let e = p.sigma * (wc * shared + wi * draw());
            let lag = |k: usize| if t >= k { r[(t - k) * n + i] } else { 0.0 };
            r[t * n + i] = match kind {
                SynthKind::Ar1Panel => p.phi * lag(1) + e,
                SynthKind::RegimeSwitch => match regime_order(t, p.segment) {
                    1 => p.phi * lag(1) + e,
                    _ => p.phi2.0 * lag(1) + p.phi2.1 * lag(2) + e,
                },
                SynthKind::DominantAsset => {
                    let mu = if i == 0 { p.drift } else { -p.drift };
                    mu + e
                }
            };
        }
    }
    Ok(r)
}

pub fn synth(kind: SynthKind, p: &SynthParams, seed: u64) -> Result<PriceFrame, Error> {
    let r = synth_returns(kind, p, seed)?;
    let n = p.series;
    let mut values = vec![p.start_price; n];
    for t in 0..p.steps - 1 {
        for i in 0..n {
            let prev = values[t * n + i];
            values.push(prev * r[t * n + i].exp());
        }
    }
    let tickers = (0..n).map(|i| format!("S{i}")).collect();
    PriceFrame::new(business_days(p.start_date, p.steps), tickers, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "date,A,B\n2020-01-01,1,2\n2020-01-02,1.5,2.5\n2020-01-03,2,3\n";

    #[test]
    fn ingests_well_formed_file() {
        let f = ingest(GOOD.as_bytes(), MissingPolicy::Reject).unwrap();
        assert_eq!((f.len(), f.n()), (3, 2));
        assert_eq!(f.column(1), vec![2.0, 2.5, 3.0]);
    }

    #[test]
    fn rejects_bad_rows() {
        let dup = "date,A\n2020-01-01,1\n2020-01-01,2\n";
        let e = ingest(dup.as_bytes(), MissingPolicy::Reject).unwrap_err();
        assert!(e.to_string().contains("2020-01-01"));
        let back = "date,A\n2020-01-02,1\n2020-01-01,2\n";
        assert!(ingest(back.as_bytes(), MissingPolicy::Reject).is_err());
        let neg = "date,A\n2020-01-01,-1\n";
        assert!(ingest(neg.as_bytes(), MissingPolicy::Reject).is_err());
        let lead = "date,A\n2020-01-01,\n2020-01-02,2\n";
        assert!(ingest(lead.as_bytes(), MissingPolicy::ForwardFill).is_err());
    }

    #[test]
    fn forward_fill_copies_previous_value() {
        let gap = "date,A,B\n2020-01-01,1,2\n2020-01-02,,2.5\n";
        assert!(ingest(gap.as_bytes(), MissingPolicy::Reject).is_err());
        let f = ingest(gap.as_bytes(), MissingPolicy::ForwardFill).unwrap();
        assert_eq!(f.row(1), &[1.0, 2.5]);
    }

    #[test]
    fn export_round_trips() {
        let f = synth(
            SynthKind::Ar1Panel,
            &SynthParams {
                steps: 50,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_frame(&f, &mut buf).unwrap();
        assert_eq!(ingest(&buf[..], MissingPolicy::Reject).unwrap(), f);
    }

    #[test]
    fn synth_is_seeded() {
        let p = SynthParams::default();
        let a = synth(SynthKind::RegimeSwitch, &p, 1).unwrap();
        assert_eq!(a, synth(SynthKind::RegimeSwitch, &p, 1).unwrap());
        assert_ne!(a, synth(SynthKind::RegimeSwitch, &p, 2).unwrap());
        assert!(synth(SynthKind::Ar1Panel, &SynthParams { phi: 1.0, ..p }, 1).is_err());
    }

    #[test]
    fn business_days_skip_weekends() {
        let d = business_days(NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(), 2);
        assert_eq!(d[1], NaiveDate::from_ymd_opt(2024, 1, 8).unwrap());
    }
}
