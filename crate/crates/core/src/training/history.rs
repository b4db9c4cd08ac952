use std::path::Path;

use crate::error::{Error, Result};
use crate::objectives::LossBreakdown;
use crate::training::{FinetuneRow, HistoryRow};

fn write_csv(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(Error::from)
}

/// `epoch,split,<loss fields>` with shortest round-trip float formatting.
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("epoch,split");
    for f in LossBreakdown::FIELDS {
        out.push(',');
        out.push_str(f);
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{}", r.epoch, r.split.name()));
        for v in r.losses.values() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_history(path: impl AsRef<Path>, rows: &[HistoryRow]) -> Result<()> {
    write_csv(path.as_ref(), &history_csv(rows))
}

/// `epoch,split,bce,accuracy`.
pub fn finetune_history_csv(rows: &[FinetuneRow]) -> String {
    let mut out = String::from("epoch,split,bce,accuracy\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.split.name(), r.bce, r.accuracy));
    }
    out
}

pub fn write_finetune_history(path: impl AsRef<Path>, rows: &[FinetuneRow]) -> Result<()> {
    write_csv(path.as_ref(), &finetune_history_csv(rows))
}
