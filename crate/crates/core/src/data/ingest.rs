//! CSV ingestion and export.
//!
//! Prices are long format, one row per (date, ticker):
//!
//! ```text
//! date,ticker,open,high,low,close,volume
//! ```
//!
//! Industries map tickers to industry names; a ticker may appear on several
//! rows to belong to several industries:
//!
//! ```text
//! ticker,industry
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use super::panel::{IndustryIncidence, MarketPanel, CLOSE, INDICATORS, VOLUME};
use crate::error::{Error, Result};

/// How dates missing for some tickers are handled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// Any (ticker, date) gap is an error.
    #[default]
    Strict,
    /// Keep only dates that every ticker has.
    Intersection,
}

const PRICE_HEADER: [&str; 7] = ["date", "ticker", "open", "high", "low", "close", "volume"];

pub fn ingest_csv(
    prices: impl AsRef<Path>,
    industries: impl AsRef<Path>,
    align: Alignment,
) -> Result<(MarketPanel, IndustryIncidence)> {
    let panel = read_prices(prices.as_ref(), align)?;
    let inc = read_industries(industries.as_ref(), panel.tickers())?;
    Ok((panel, inc))
}

fn file_label(p: &Path) -> String {
    p.display().to_string()
}

fn check_header(rdr: &mut csv::Reader<std::fs::File>, expected: &[&str], file: &str) -> Result<()> {
    let header = rdr.headers()?.clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Ingest {
            file: file.to_string(),
            row: 1,
            message: format!("expected header {}, found {}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

pub fn read_prices(path: &Path, align: Alignment) -> Result<MarketPanel> {
    let file = file_label(path);
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    check_header(&mut rdr, &PRICE_HEADER, &file)?;

    let mut cells: BTreeMap<(String, String), [f64; 5]> = BTreeMap::new();
    let mut tickers = BTreeSet::new();
    let mut dates = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Ingest {
            file: file.clone(),
            row,
            message,
        };
        if rec.len() != PRICE_HEADER.len() {
            return Err(bad(format!("expected 7 fields, found {}", rec.len())));
        }
        let date = rec[0].trim().to_string();
        let ticker = rec[1].trim().to_string();
        if date.is_empty() || ticker.is_empty() {
            return Err(bad("empty date or ticker".into()));
        }
        let mut vals = [0.0; 5];
        for (k, v) in vals.iter_mut().enumerate() {
            let raw = rec[k + 2].trim();
            *v = raw
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| bad(format!("unparseable {} value {raw:?}", INDICATORS[k])))?;
        }
        if vals[CLOSE] <= 0.0 {
            return Err(bad(format!("non-positive close {} for {ticker} on {date}", vals[CLOSE])));
        }
        if let Some(k) = (0..VOLUME).find(|&k| vals[k] <= 0.0) {
            return Err(bad(format!("non-positive {} for {ticker} on {date}", INDICATORS[k])));
        }
        if vals[VOLUME] < 0.0 {
            return Err(bad(format!("negative volume for {ticker} on {date}")));
        }
        tickers.insert(ticker.clone());
        dates.insert(date.clone());
        if cells.insert((ticker.clone(), date.clone()), vals).is_some() {
            return Err(bad(format!("duplicate row for {ticker} on {date}")));
        }
    }

    let tickers: Vec<String> = tickers.into_iter().collect();
    let mut kept = Vec::new();
    for date in &dates {
        let missing = tickers
            .iter()
            .find(|t| !cells.contains_key(&((*t).clone(), date.clone())));
        match (missing, align) {
            (None, _) => kept.push(date.clone()),
            (Some(t), Alignment::Strict) => {
                return Err(Error::Panel(format!("ticker {t} has no row for date {date}")))
            }
            (Some(_), Alignment::Intersection) => {}
        }
    }
    if kept.is_empty() {
        return Err(Error::Panel("no date is shared by all tickers".into()));
    }

    let mut values = Vec::with_capacity(tickers.len() * kept.len() * INDICATORS.len());
    for t in &tickers {
        for d in &kept {
            values.extend_from_slice(&cells[&(t.clone(), d.clone())]);
        }
    }
    MarketPanel::new(tickers, kept, values)
}

/// Reads `ticker,industry` rows for the given tickers. Rows for tickers not
/// in the panel are ignored; panel tickers without any row are an error.
pub fn read_industries(path: &Path, tickers: &[String]) -> Result<IndustryIncidence> {
    let file = file_label(path);
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    check_header(&mut rdr, &["ticker", "industry"], &file)?;
    let wanted: BTreeSet<&str> = tickers.iter().map(String::as_str).collect();
    let mut membership: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 || rec[0].trim().is_empty() || rec[1].trim().is_empty() {
            return Err(Error::Ingest {
                file: file.clone(),
                row,
                message: "expected non-empty ticker,industry".into(),
            });
        }
        let ticker = rec[0].trim();
        if wanted.contains(ticker) {
            membership
                .entry(ticker.to_string())
                .or_default()
                .insert(rec[1].trim().to_string());
        }
    }
    if let Some(t) = tickers.iter().find(|t| !membership.contains_key(*t)) {
        return Err(Error::Panel(format!("ticker {t} has no industry row")));
    }
    let names: Vec<String> = membership
        .values()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let col: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let k = names.len();
    let mut matrix = vec![0.0; tickers.len() * k];
    for (s, t) in tickers.iter().enumerate() {
        for ind in &membership[t] {
            matrix[s * k + col[ind.as_str()]] = 1.0;
        }
    }
    IndustryIncidence::new(tickers.len(), names, matrix)
}

/// Writes the panel in the long price format. Floats use Rust's shortest
/// round-trip representation, so re-ingesting yields identical values.
pub fn write_prices(panel: &MarketPanel, w: &mut impl Write) -> Result<()> {
    writeln!(w, "{}", PRICE_HEADER.join(","))?;
    for d in 0..panel.n_days() {
        for s in 0..panel.n_stocks() {
            write!(w, "{},{}", panel.dates()[d], panel.tickers()[s])?;
            for k in 0..INDICATORS.len() {
                write!(w, ",{}", panel.value(s, d, k))?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn write_industries(inc: &IndustryIncidence, tickers: &[String], w: &mut impl Write) -> Result<()> {
    if tickers.len() != inc.n_stocks() {
        return Err(Error::dim("ticker list does not match incidence rows"));
    }
    writeln!(w, "ticker,industry")?;
    for (s, t) in tickers.iter().enumerate() {
        for m in 0..inc.n_industries() {
            if inc.contains(s, m) {
                writeln!(w, "{t},{}", inc.names()[m])?;
            }
        }
    }
    Ok(())
}
