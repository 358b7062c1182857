use std::collections::BTreeSet;
use std::path::Path;

use super::{RawEvent, TemporalGraph};
use crate::error::{Error, Result};

/// Reads `user_id,item_id,timestamp,state_label,feat...` rows after a header.
///
/// With `bipartite`, user and item ids live in separate spaces and users are
/// numbered first; otherwise both columns share one id space.
pub fn read_jodie_csv(path: &Path, bipartite: bool) -> Result<TemporalGraph> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() < 4 {
            return Err(Error::Format(format!("row {row}: expected at least 4 columns, found {}", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("row {row}, column {i}: `{}` is not a number", &rec[i])))
        };
        let id = |i: usize| -> Result<u64> {
            let v = num(i)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Format(format!("row {row}: node id `{}` is not a non-negative integer", &rec[i])));
            }
            Ok(v as u64)
        };
        let features = (4..rec.len()).map(num).collect::<Result<Vec<_>>>()?;
        rows.push(RawEvent::new(id(0)?, id(1)?, num(2)?, features));
    }
    if rows.is_empty() {
        return Err(Error::Empty);
    }
    if !bipartite {
        return super::ingest_events(rows);
    }
    let users: BTreeSet<u64> = rows.iter().map(|r| r.src).collect();
    let items: BTreeSet<u64> = rows.iter().map(|r| r.dst).collect();
    let user_index: std::collections::HashMap<u64, usize> =
        users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let item_index: std::collections::HashMap<u64, usize> =
        items.iter().enumerate().map(|(i, &v)| (v, users.len() + i)).collect();
    let labels = users
        .iter()
        .map(|u| format!("u{u}"))
        .chain(items.iter().map(|i| format!("i{i}")))
        .collect();
    let events = rows
        .into_iter()
        .map(|r| (user_index[&r.src], item_index[&r.dst], r.t, r.features))
        .collect();
    TemporalGraph::from_rows(events, labels, 0)
}

/// Writes the graph's events in the JODIE layout using compact node ids.
pub fn write_jodie_csv(g: &TemporalGraph, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["user_id".to_string(), "item_id".into(), "timestamp".into(), "state_label".into()];
    header.extend((0..g.dim_edge()).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for e in g.events() {
        let mut rec = vec![e.src.to_string(), e.dst.to_string(), format!("{}", e.t), "0".into()];
        rec.extend(e.features.iter().map(|x| format!("{x}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Two columns: compact node id and the original label.
pub fn write_remap_csv(g: &TemporalGraph, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node", "original"])?;
    for (i, l) in g.labels().iter().enumerate() {
        w.write_record([i.to_string(), l.clone()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_remap_csv(path: &Path) -> Result<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("remap row {row}: bad node id")))?;
        if id != out.len() {
            return Err(Error::Format(format!("remap row {row}: ids must be consecutive")));
        }
        out.push(rec.get(1).unwrap_or_default().to_string());
    }
    Ok(out)
}
