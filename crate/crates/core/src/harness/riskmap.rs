//! Per-participant grids of daily risks, right-aligned so the most recent
//! shift of every month sits in the last column.

use std::io::Write;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::hipal::HiPALModel;
use crate::logstore::Dataset;

#[derive(Clone, Debug, PartialEq)]
pub struct RiskRow {
    pub month_index: u32,
    pub gamma: f64,
    /// Daily risks in shift order.
    pub alphas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskMap {
    pub participant_id: String,
    pub rows: Vec<RiskRow>,
}

impl RiskMap {
    pub fn width(&self) -> usize {
        self.rows.iter().map(|r| r.alphas.len()).max().unwrap_or(0)
    }

    /// Right-aligned cells; `None` marks positions a month does not reach.
    pub fn grid(&self) -> Vec<Vec<Option<f64>>> {
        let w = self.width();
        self.rows
            .iter()
            .map(|r| {
                let pad = w - r.alphas.len();
                (0..w).map(|c| c.checked_sub(pad).map(|k| r.alphas[k])).collect()
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let width = self.width();
        let mut header = vec!["month_index".to_string(), "gamma".into()];
        header.extend((0..width).map(|c| format!("shift_{}", c as i64 - width as i64 + 1)));
        out.write_record(&header)?;
        for (r, cells) in self.rows.iter().zip(self.grid()) {
            let mut row = vec![r.month_index.to_string(), format!("{}", r.gamma)];
            row.extend(cells.iter().map(|c| c.map_or(String::new(), |v| format!("{v}"))));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Heatmap with one `cell × cell` block per grid cell; white is 0,
    /// red is 1 and absent cells are grey.
    pub fn render(&self, cell: u32) -> RgbImage {
        let grid = self.grid();
        let (w, h) = (self.width().max(1) as u32, grid.len().max(1) as u32);
        let mut img = RgbImage::from_pixel(w * cell, h * cell, Rgb([200, 200, 200]));
        for (y, row) in grid.iter().enumerate() {
            for (x, v) in row.iter().enumerate() {
                let Some(v) = v else { continue };
                let fade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
                let px = Rgb([255, fade, fade]);
                for dy in 0..cell {
                    for dx in 0..cell {
                        img.put_pixel(x as u32 * cell + dx, y as u32 * cell + dy, px);
                    }
                }
            }
        }
        img
    }

    pub fn save_png(&self, path: &Path, cell: u32) -> Result<()> {
        self.render(cell).save(path)?;
        Ok(())
    }
}

pub fn risk_map(model: &HiPALModel, ds: &Dataset, participant_id: &str) -> Result<RiskMap> {
    let months: Vec<_> = ds.months_of(participant_id).collect();
    if months.is_empty() {
        return Err(Error::NotFound(format!("unknown participant {participant_id}")));
    }
    let preds = model.predict_batch(&months)?;
    Ok(RiskMap {
        participant_id: participant_id.to_owned(),
        rows: months
            .iter()
            .zip(preds)
            .map(|(m, p)| RiskRow {
                month_index: m.month_index,
                gamma: p.gamma,
                alphas: p.daily_risks,
            })
            .collect(),
    })
}
