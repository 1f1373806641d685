//! Feature-matrix CSV and PBAT JSON-lines writers.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::index::{NeighborRecord, PredictionBehaviorTable};
use crate::metrics::UqFeatureVector;
use crate::model::SampleId;

/// `query_id,correct,sm,dc_1..dc_{L-1},lu_0..lu_{L-1}` header for `L` layers.
pub fn features_csv_header(num_layers: usize) -> String {
    let mut cols = vec!["query_id".to_string(), "correct".into(), "sm".into()];
    cols.extend((1..num_layers).map(|t| format!("dc_{t}")));
    cols.extend((0..num_layers).map(|l| format!("lu_{l}")));
    cols.join(",")
}

/// Writes one CSV row per feature vector. `correct` is `1`/`0`; reals use the
/// shortest representation that round-trips.
pub fn write_features_csv<W: Write>(mut w: W, features: &[UqFeatureVector]) -> Result<()> {
    let num_layers = features.first().map_or(1, |f| f.lu.len());
    writeln!(w, "{}", features_csv_header(num_layers))?;
    for f in features {
        write!(
            w,
            "{},{},{}",
            f.query_id,
            u8::from(f.correct),
            f.softmax_confidence
        )?;
        for d in &f.dc {
            write!(w, ",{d}")?;
        }
        for h in &f.lu {
            write!(w, ",{h}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct PbatLine<'a> {
    query_id: SampleId,
    k: usize,
    layers: BTreeMap<usize, &'a [NeighborRecord]>,
}

/// One JSON object per query: `{"query_id", "k", "layers": {"0": [{id,label,distance}, ...], ...}}`.
pub fn write_pbat_jsonl<W: Write>(mut w: W, pbats: &[PredictionBehaviorTable]) -> Result<()> {
    for p in pbats {
        let line = PbatLine {
            query_id: p.query_id,
            k: p.k,
            layers: p.rows.iter().map(Vec::as_slice).enumerate().collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
