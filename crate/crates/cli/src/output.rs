use std::fs;
use std::path::{Path, PathBuf};

use absa_core::checkpoint::Checkpoint;
use absa_core::experiment::{Prepared, SeedRun};
use absa_core::metrics::MetricsReport;
use absa_core::RunConfig;
use tempfile::TempDir;

use crate::{CliError, Result};

/// An output directory under construction. Files go into a temporary
/// sibling of the destination; [`Staging::commit`] moves it into place.
pub struct Staging {
    tmp: TempDir,
    dest: PathBuf,
}

impl Staging {
    /// Fails with a usage error when `dest` exists and `force` is off.
    pub fn new(dest: &Path, force: bool) -> Result<Self> {
        if dest.exists() && !force {
            return Err(CliError::Usage(format!(
                "{} already exists; pass --force to replace it",
                dest.display()
            )));
        }
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| CliError::output(&parent, e))?;
        let tmp = tempfile::Builder::new()
            .prefix(".absa-")
            .tempdir_in(&parent)
            .map_err(|e| CliError::output(&parent, e))?;
        Ok(Staging {
            tmp,
            dest: dest.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        self.tmp.path()
    }

    /// `self.path()` joined with `rel`, with parent directories created.
    pub fn file(&self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.tmp.path().join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
        }
        Ok(p)
    }

    pub fn write(&self, rel: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.file(rel)?;
        fs::write(&p, contents).map_err(|e| CliError::output(&p, e))
    }

    pub fn commit(self) -> Result<PathBuf> {
        let dest = self.dest;
        if dest.is_dir() {
            fs::remove_dir_all(&dest).map_err(|e| CliError::output(&dest, e))?;
        } else if dest.exists() {
            fs::remove_file(&dest).map_err(|e| CliError::output(&dest, e))?;
        }
        let tmp = self.tmp.keep();
        fs::rename(&tmp, &dest).map_err(|e| CliError::output(&dest, e))?;
        Ok(dest)
    }
}

pub fn seed_dir(seed: u64) -> String {
    format!("seed-{seed}")
}

pub fn doc_ids_text(ids: &[usize]) -> String {
    ids.iter().map(|i| format!("{i}\n")).collect()
}

/// Writes one trained configuration under `rel`: resolved config, metrics,
/// document ids, and per seed the selected aspect checkpoint, its history
/// and, when pretraining ran here, the document checkpoint and its history.
pub fn write_run(
    out: &Staging,
    rel: &Path,
    cfg: &RunConfig,
    data: &Prepared,
    runs: &[SeedRun],
    report: &MetricsReport,
) -> Result<()> {
    out.write(rel.join("config.txt"), cfg.to_text())?;
    out.write(rel.join("metrics.json"), report.to_json())?;
    if !data.doc_ids.is_empty() {
        out.write(rel.join("doc_ids.txt"), doc_ids_text(&data.doc_ids))?;
    }
    for r in runs {
        let dir = rel.join(seed_dir(r.seed));
        Checkpoint::from_aspect(&r.params, &data.vocab)?.save(&out.file(dir.join("model.ckpt"))?)?;
        out.write(dir.join("history.json"), r.history.to_json())?;
        if let (Some(doc), Some(h)) = (&r.pretrained, &r.doc_history) {
            Checkpoint::from_doc(doc, &data.vocab)?.save(&out.file(dir.join("doc.ckpt"))?)?;
            out.write(dir.join("doc-history.json"), h.to_json())?;
        }
    }
    Ok(())
}

/// Looks for `vocab.txt` next to a checkpoint and up to two levels above.
pub fn find_vocab(checkpoint: &Path) -> Option<PathBuf> {
    checkpoint
        .ancestors()
        .skip(1)
        .take(3)
        .map(|d| d.join("vocab.txt"))
        .find(|p| p.is_file())
}

/// A line chart of accuracy and macro-F1 against the document fraction.
pub fn curve_svg(rows: &[(f64, f64, f64)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 48.0;
    let (lo, hi) = rows
        .iter()
        .flat_map(|r| [r.1, r.2])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (lo, span) = (lo - 0.05 * span, 1.1 * span);
    let x = |f: f64| PAD + f * (W - 2.0 * PAD);
    let y = |v: f64| H - PAD - (v - lo) / span * (H - 2.0 * PAD);
    let line = |pick: fn(&(f64, f64, f64)) -> f64| {
        rows.iter()
            .map(|r| format!("{:.1},{:.1}", x(r.0), y(pick(r))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    s += &format!(
        "<line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n",
        b = H - PAD,
        r = W - PAD
    );
    for f in [0.0, 0.5, 1.0] {
        s += &format!("<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{f:.1}</text>\n", x(f), H - PAD + 16.0);
    }
    for v in [lo + 0.1 * span, lo + 0.9 * span] {
        s += &format!("<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.3}</text>\n", PAD - 4.0, y(v) + 4.0);
    }
    s += &format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">document fraction</text>\n",
        W / 2.0,
        H - 8.0
    );
    s += &format!("<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>\n", line(|r| r.1));
    s += &format!("<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" points=\"{}\"/>\n", line(|r| r.2));
    s += &format!("<text x=\"{:.1}\" y=\"24\" fill=\"#1f77b4\">accuracy</text>\n", PAD);
    s += &format!("<text x=\"{:.1}\" y=\"24\" fill=\"#d62728\">macro-F1</text>\n", PAD + 80.0);
    s + "</svg>\n"
}
