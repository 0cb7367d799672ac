//! MNIST from uncompressed IDX files.

use std::path::{Path, PathBuf};

use ladder_core::data::{parse_idx, Dataset};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Test,
}

impl Part {
    fn prefix(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Test => "t10k",
        }
    }
}

/// Accepts both `train-images-idx3-ubyte` and `train-images.idx3-ubyte`.
fn locate(dir: &Path, stem: &str, kind: &str) -> Result<PathBuf, CliError> {
    for sep in ['-', '.'] {
        let p = dir.join(format!("{stem}{sep}{kind}-ubyte"));
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(CliError::Data(format!("{}: no {stem}-{kind}-ubyte (uncompressed IDX expected)", dir.display())))
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads one half of MNIST with pixels scaled to `[0, 1]`.
pub fn load(dir: &Path, part: Part) -> Result<Dataset, CliError> {
    let images = locate(dir, &format!("{}-images", part.prefix()), "idx3")?;
    let labels = locate(dir, &format!("{}-labels", part.prefix()), "idx1")?;
    load_pair(&images, &labels)
}

fn data_err(p: &Path) -> impl Fn(ladder_core::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", p.display()))
}

pub fn load_pair(images: &Path, labels: &Path) -> Result<Dataset, CliError> {
    let img = parse_idx(&read(images)?).map_err(data_err(images))?;
    let lab = parse_idx(&read(labels)?).map_err(data_err(labels))?;
    let x = img.to_matrix().map_err(data_err(images))?;
    let y = lab.to_labels().map_err(data_err(labels))?;
    if x.rows() != y.len() {
        return Err(CliError::Data(format!("{} images but {} labels", x.rows(), y.len())));
    }
    let classes = y.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(x, Some(y), classes).map_err(data_err(images))
}
