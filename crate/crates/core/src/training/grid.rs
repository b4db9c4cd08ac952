use crate::data::PairedSample;
use crate::error::{Error, Result};
use crate::model::ArchConfig;
use crate::objectives::ObjectiveConfig;
use crate::scalar::Scalar;
use crate::training::{pretrain, RunConfig, Split};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub lambda_cxr: f64,
    pub lambda_ecg: f64,
    /// Final-epoch validation `-total`.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: (f64, f64),
    pub table: Vec<GridCell>,
}

/// Lowest `val_loss`; ties go to the lexicographically smallest
/// `(lambda_cxr, lambda_ecg)`. Non-finite losses never win.
pub fn select_best(table: &[GridCell]) -> Option<(f64, f64)> {
    table
        .iter()
        .filter(|c| c.val_loss.is_finite())
        .min_by(|a, b| {
            a.val_loss
                .total_cmp(&b.val_loss)
                .then(a.lambda_cxr.total_cmp(&b.lambda_cxr))
                .then(a.lambda_ecg.total_cmp(&b.lambda_ecg))
        })
        .map(|c| (c.lambda_cxr, c.lambda_ecg))
}

/// Short pre-training per `(lambda_cxr, lambda_ecg)` cell on the run's
/// train/validation split, every cell from the same seed.
pub fn grid_search_lambda<S: Scalar>(
    dataset: &[PairedSample<S>],
    grid: &[(f64, f64)],
    arch: &ArchConfig,
    obj: &ObjectiveConfig,
    run: &RunConfig,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    let mut table = Vec::with_capacity(grid.len());
    for &(lambda_cxr, lambda_ecg) in grid {
        let cell_obj = ObjectiveConfig { lambda_cxr, lambda_ecg, ..*obj };
        let res = pretrain(dataset, arch, &cell_obj, run)?;
        let last = res
            .history
            .iter()
            .rev()
            .find(|r| r.split == Split::Val)
            .or_else(|| res.history.last())
            .expect("history has one row per epoch");
        let cell = GridCell { lambda_cxr, lambda_ecg, val_loss: -last.losses.total };
        if run.verbose {
            eprintln!("grid cell ({lambda_cxr}, {lambda_ecg}): val -total {:.4}", cell.val_loss);
        }
        table.push(cell);
    }
    let best = select_best(&table).ok_or_else(|| Error::Numeric("every grid cell diverged".into()))?;
    Ok(GridResult { best, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    fn cell(c: f64, e: f64, v: f64) -> GridCell {
        GridCell { lambda_cxr: c, lambda_ecg: e, val_loss: v }
    }

    #[test]
    fn argmin_and_ties() {
        assert_eq!(select_best(&[cell(2.0, 1.0, 5.0)]), Some((2.0, 1.0)));
        assert_eq!(select_best(&[cell(1.0, 1.0, 5.0), cell(2.0, 1.0, 4.0)]), Some((2.0, 1.0)));
        assert_eq!(select_best(&[cell(2.0, 0.5, 4.0), cell(1.0, 2.0, 4.0), cell(1.0, 1.0, 4.0)]), Some((1.0, 1.0)));
        assert_eq!(select_best(&[cell(0.1, 0.1, f64::NAN), cell(5.0, 5.0, 9.0)]), Some((5.0, 5.0)));
    }

    #[test]
    fn small_grid_runs() {
        let arch = ArchConfig { image_h: 8, image_w: 8, signal_len: 32, channels: [2, 2, 2], latent_dim: 2, head_hidden: 4, ..ArchConfig::desk() };
        let data = synth_generate::<f32>(&SynthConfig { n: 10, image_h: 8, image_w: 8, signal_len: 32, ..SynthConfig::default() }).unwrap();
        let run = RunConfig { epochs: 1, batch_size: 4, ..RunConfig::pretrain_default() };
        let one = grid_search_lambda(&data, &[(1.0, 1.0)], &arch, &ObjectiveConfig::default(), &run).unwrap();
        assert_eq!(one.best, (1.0, 1.0));
        // a zero-weighted likelihood leaves only the KL term, which is far smaller
        let two = grid_search_lambda(&data, &[(1.0, 1.0), (0.0, 0.0)], &arch, &ObjectiveConfig::default(), &run).unwrap();
        assert_eq!(two.best, (0.0, 0.0));
        assert_eq!(two.table.len(), 2);
        assert!(grid_search_lambda(&data, &[], &arch, &ObjectiveConfig::default(), &run).is_err());
    }
}
