//! Attention-map export: a CSV table and PPM heat maps.
//!
//! CSV layout, one row per matrix row: `map,row,c0,c1,...,c{N-1}`.
//! Heat maps use a fixed ramp on the absolute weight in `[0, 1]` so images
//! are comparable across runs: black at 0, through red and yellow, to white
//! at 1 (`r = 3t`, `g = 3t - 1`, `b = 3t - 2`, each clamped to `[0, 1]`).

use crate::error::{Error, Result};

/// One named square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub label: String,
    pub size: usize,
    pub values: Vec<f64>,
}

impl AttentionMap {
    pub fn new(label: impl Into<String>, size: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != size * size {
            return Err(Error::invalid("attention map", format!("{} values for {size}x{size}", values.len())));
        }
        Ok(AttentionMap {
            label: label.into(),
            size,
            values,
        })
    }
}

pub fn write_attention_csv(maps: &[AttentionMap]) -> Result<Vec<u8>> {
    let width = maps.first().map_or(0, |m| m.size);
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Format(format!("attention csv: {e}"));
    let mut header = vec!["map".to_string(), "row".to_string()];
    header.extend((0..width).map(|c| format!("c{c}")));
    w.write_record(&header).map_err(err)?;
    for m in maps {
        if m.size != width {
            return Err(Error::invalid("attention csv", "maps must share one size"));
        }
        for (r, row) in m.values.chunks(m.size.max(1)).enumerate() {
            let mut rec = vec![m.label.clone(), r.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(err)?;
        }
    }
    w.into_inner().map_err(|e| Error::Format(format!("attention csv: {e}")))
}

pub fn read_attention_csv(bytes: &[u8]) -> Result<Vec<AttentionMap>> {
    let mut r = csv::Reader::from_reader(bytes);
    let width = r
        .headers()
        .map_err(|e| Error::Format(format!("attention csv header: {e}")))?
        .len()
        .checked_sub(2)
        .ok_or_else(|| Error::Format("attention csv header is too short".into()))?;
    let mut maps: Vec<AttentionMap> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Format(format!("attention csv line {line}: {e}")))?;
        let label = rec.get(0).unwrap_or_default();
        let row: usize = rec
            .get(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format(format!("attention csv line {line}: bad row index")))?;
        let values = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|_| Error::Format(format!("attention csv line {line}: bad number {v:?}"))))
            .collect::<Result<Vec<_>>>()?;
        match maps.last_mut() {
            Some(m) if m.label == label && row == m.values.len() / width => m.values.extend(values),
            _ if row == 0 => maps.push(AttentionMap {
                label: label.to_string(),
                size: width,
                values,
            }),
            _ => return Err(Error::Format(format!("attention csv line {line}: rows out of order"))),
        }
    }
    if let Some(m) = maps.iter().find(|m| m.values.len() != width * width) {
        return Err(Error::Format(format!("attention map {:?} is incomplete", m.label)));
    }
    Ok(maps)
}

/// The fixed color ramp.
pub fn ramp(weight: f64) -> [u8; 3] {
    let t = weight.abs().clamp(0.0, 1.0);
    let channel = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [channel(3.0 * t), channel(3.0 * t - 1.0), channel(3.0 * t - 2.0)]
}

/// Binary PPM (P6) with each matrix entry drawn as a `cell × cell` square.
pub fn heatmap_ppm(map: &AttentionMap, cell: usize) -> Vec<u8> {
    let side = map.size * cell.max(1);
    let mut out = format!("P6\n{side} {side}\n255\n").into_bytes();
    for y in 0..side {
        for x in 0..side {
            let v = map.values[(y / cell.max(1)) * map.size + x / cell.max(1)];
            out.extend_from_slice(&ramp(v));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), [0, 0, 0]);
        assert_eq!(ramp(1.0), [255, 255, 255]);
        assert_eq!(ramp(1.0 / 3.0), [255, 0, 0]);
        assert_eq!(ramp(-1.0), ramp(1.0));
    }

    #[test]
    fn ppm_dimensions() {
        let m = AttentionMap::new("a", 2, vec![0.0, 1.0, 0.5, 0.5]).unwrap();
        let img = heatmap_ppm(&m, 3);
        let header = b"P6\n6 6\n255\n";
        assert_eq!(&img[..header.len()], header);
        assert_eq!(img.len(), header.len() + 6 * 6 * 3);
    }

    #[test]
    fn csv_round_trip() {
        let maps = vec![
            AttentionMap::new("block0.0.hop1", 2, vec![0.25, 0.75, 1.0 / 3.0, 2.0 / 3.0]).unwrap(),
            AttentionMap::new("block0.0.hop2", 2, vec![1.0, 0.0, 0.5, 0.5]).unwrap(),
        ];
        let back = read_attention_csv(&write_attention_csv(&maps).unwrap()).unwrap();
        assert_eq!(back, maps);
        assert!(AttentionMap::new("x", 2, vec![0.0; 3]).is_err());
    }
}
