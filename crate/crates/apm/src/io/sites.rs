//! Site tables: CSV with header `site_id,x,y,period,polarity,find_count`.

use std::path::Path;

use apm_core::labels::{check_unique_ids, Period, Polarity, SiteRecord};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    site_id: String,
    x: f64,
    y: f64,
    period: String,
    polarity: String,
    find_count: Option<u32>,
}

pub const SITE_HEADER: [&str; 6] = ["site_id", "x", "y", "period", "polarity", "find_count"];

pub fn parse_sites(reader: impl std::io::Read, origin: &Path) -> Result<Vec<SiteRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| AppError::format(origin, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != SITE_HEADER {
        return Err(AppError::format(
            origin,
            format!("expected header `{}`, found `{}`", SITE_HEADER.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut sites = Vec::new();
    for (line, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| AppError::format(origin, format!("row {}: {e}", line + 2)))?;
        let period: Period = row.period.parse().map_err(|e: apm_core::Error| AppError::format(origin, format!("row {}: {e}", line + 2)))?;
        let polarity: Polarity = row
            .polarity
            .parse()
            .map_err(|e: apm_core::Error| AppError::format(origin, format!("row {}: {e}", line + 2)))?;
        if !row.x.is_finite() || !row.y.is_finite() {
            return Err(AppError::format(origin, format!("row {}: non-finite coordinates", line + 2)));
        }
        sites.push(SiteRecord {
            site_id: row.site_id,
            x: row.x,
            y: row.y,
            period,
            polarity,
            find_count: row.find_count,
        });
    }
    check_unique_ids(&sites)?;
    Ok(sites)
}

pub fn read_sites(path: impl AsRef<Path>) -> Result<Vec<SiteRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    parse_sites(file, path)
}

pub fn write_sites(path: impl AsRef<Path>, sites: &[SiteRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::format(path, e.to_string()))?;
    for s in sites {
        w.serialize(Row {
            site_id: s.site_id.clone(),
            x: s.x,
            y: s.y,
            period: s.period.name().to_string(),
            polarity: s.polarity.to_string(),
            find_count: s.find_count,
        })
        .map_err(|e| AppError::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// Sites of one period, or all sites when `period` is `None`.
pub fn filter_period(sites: &[SiteRecord], period: Option<Period>) -> Vec<SiteRecord> {
    sites
        .iter()
        .filter(|s| period.is_none_or(|p| s.period == p))
        .cloned()
        .collect()
}
