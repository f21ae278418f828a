use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossBreakdown;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean: LossBreakdown,
}

impl EpochRecord {
    pub fn aggregate(epoch: usize, steps: &[StepRecord]) -> Self {
        let n = steps.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for s in steps {
            let l = &s.loss;
            m.id += l.id / n;
            m.redun += l.redun / n;
            m.recon += l.recon / n;
            m.map += l.map / n;
            m.gen += l.gen / n;
            m.cycle += l.cycle / n;
            m.attr += l.attr / n;
            m.total += l.total / n;
        }
        Self {
            epoch,
            steps: steps.len(),
            mean: m,
        }
    }
}

/// Step and epoch records plus per-epoch wall-clock seconds. Timing is kept
/// apart from the loss records so the latter are reproducible byte for byte.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub wall_clock_s: Vec<f64>,
}

impl TrainLog {
    pub fn totals(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss.total).collect()
    }

    /// Human-readable run summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let (Some(first), Some(last)) = (self.steps.first(), self.steps.last()) else {
            return "no steps recorded\n".to_string();
        };
        let l = &last.loss;
        s.push_str(&format!(
            "steps {}..={} over {} epochs\n",
            first.step,
            last.step,
            self.epochs.len()
        ));
        s.push_str(&format!("total loss {:.6} -> {:.6}\n", first.loss.total, l.total));
        s.push_str(&format!(
            "final terms: id {:.6} redun {:.6} recon {:.6} map {:.6} gen {:.6} cycle {:.6} attr {:.6}\n",
            l.id, l.redun, l.recon, l.map, l.gen, l.cycle, l.attr
        ));
        let secs: f64 = self.wall_clock_s.iter().sum();
        s.push_str(&format!("wall clock {secs:.1} s\n"));
        s
    }
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Line<'a> {
    Step(&'a StepRecord),
    Epoch(&'a EpochRecord),
}

/// Appends records to a line-delimited JSON log.
pub struct LogWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl LogWriter {
    pub fn append(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: BufWriter::new(f),
            path: path.to_path_buf(),
        })
    }

    fn line(&mut self, l: &Line) -> Result<()> {
        let text = serde_json::to_string(l).expect("records serialize");
        writeln!(self.out, "{text}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn write_steps(&mut self, steps: &[StepRecord]) -> Result<()> {
        for s in steps {
            self.line(&Line::Step(s))?;
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn write_epoch(&mut self, e: &EpochRecord) -> Result<()> {
        self.line(&Line::Epoch(e))?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads the step records back from a log file.
pub fn read_steps(path: &Path) -> Result<Vec<StepRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if v.get("record").and_then(|r| r.as_str()) == Some("step") {
            out.push(serde_json::from_value(v).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?);
        }
    }
    Ok(out)
}

/// Drops records of epochs at or after `epoch`, so a resumed run appends
/// exactly what an uninterrupted run would have written. A missing file is
/// left missing.
pub fn truncate_log(path: &Path, epoch: usize) -> Result<()> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if v.get("epoch")
            .and_then(|e| e.as_u64())
            .is_some_and(|e| (e as usize) < epoch)
        {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(step: u64, epoch: usize) -> StepRecord {
        StepRecord {
            step,
            epoch,
            loss: LossBreakdown {
                total: step as f64,
                ..LossBreakdown::default()
            },
        }
    }

    #[test]
    fn write_read_and_truncate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        let mut w = LogWriter::append(&p).unwrap();
        for e in 0..3 {
            let steps = [step(2 * e as u64 + 1, e), step(2 * e as u64 + 2, e)];
            w.write_steps(&steps).unwrap();
            w.write_epoch(&EpochRecord::aggregate(e, &steps)).unwrap();
        }
        drop(w);
        assert_eq!(read_steps(&p).unwrap().len(), 6);
        truncate_log(&p, 2).unwrap();
        let back = read_steps(&p).unwrap();
        assert_eq!(back.iter().map(|s| s.step).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert_eq!(back[3], step(4, 1));
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 6);
        truncate_log(&dir.path().join("absent"), 1).unwrap();
    }

    #[test]
    fn epoch_means() {
        let r = EpochRecord::aggregate(0, &[step(1, 0), step(3, 0)]);
        assert_eq!(r.mean.total, 2.0);
        assert_eq!(r.steps, 2);
    }
}
