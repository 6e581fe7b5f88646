use std::fmt;
use std::fs;
use std::path::Path;

use super::container::{find, read_container, write_container, Entry};
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    /// Everything generated, before splitting.
    Full,
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Full => "full",
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Split::Full),
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split '{s}'"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    A,
    B,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::A => "A",
            Modality::B => "B",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Modality::A),
            "B" | "b" => Ok(Modality::B),
            _ => Err(Error::invalid(format!("unknown modality '{s}' (expected A or B)"))),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Labeled images `[N, C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
    pub split: Split,
    pub modality: Modality,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, split: Split, modality: Modality) -> Result<Self> {
        let s = images.shape();
        if s.len() != 4 {
            return Err(Error::shape("dataset", format!("images must be [N,C,H,W], got {s:?}")));
        }
        if s[0] != labels.len() {
            return Err(Error::shape("dataset", format!("{} labels for {} images", labels.len(), s[0])));
        }
        if labels.is_empty() {
            return Err(Error::invalid("dataset must not be empty"));
        }
        if classes < 2 {
            return Err(Error::invalid("dataset needs at least 2 classes"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            split,
            modality,
        })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Images and labels at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let images = self.images.select_rows(indices)?;
        Ok((images, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    /// A dataset holding the rows at `indices`.
    pub fn subset(&self, indices: &[usize], split: Split) -> Result<Dataset> {
        let (images, labels) = self.batch(indices)?;
        Dataset::new(images, labels, self.classes, split, self.modality)
    }

    pub fn with_dtype(&self, dtype: DType) -> Dataset {
        Dataset {
            images: self.images.to_dtype(dtype),
            ..self.clone()
        }
    }
}

/// Contents of a dataset directory's `manifest.txt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub classes: usize,
    pub modality: Modality,
    pub split: Split,
    pub spec_hash: String,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        format!(
            "k = {}\nmodality = {}\nsplit = {}\nspec_hash = {}\n",
            self.classes, self.modality, self.split, self.spec_hash
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (mut k, mut modality, mut split, mut hash) = (None, None, None, None);
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::invalid(format!("manifest line {}: expected key = value", no + 1)));
            };
            let value = value.trim();
            match key.trim() {
                "k" => {
                    k = Some(value.parse::<usize>().map_err(|_| {
                        Error::invalid(format!("manifest line {}: bad class count '{value}'", no + 1))
                    })?)
                }
                "modality" => modality = Some(Modality::parse(value)?),
                "split" => split = Some(Split::parse(value)?),
                "spec_hash" => hash = Some(value.to_string()),
                other => return Err(Error::invalid(format!("manifest line {}: unknown key '{other}'", no + 1))),
            }
        }
        let missing = |name: &str| Error::invalid(format!("manifest is missing '{name}'"));
        Ok(DatasetManifest {
            classes: k.ok_or_else(|| missing("k"))?,
            modality: modality.ok_or_else(|| missing("modality"))?,
            split: split.ok_or_else(|| missing("split"))?,
            spec_hash: hash.unwrap_or_default(),
        })
    }
}

/// Writes `images.tnsr`, `labels.tnsr` and `manifest.txt` into `dir`.
pub fn write_dataset_dir(dir: impl AsRef<Path>, ds: &Dataset, spec_hash: &str) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    write_container(dir.join("images.tnsr"), &[Entry::from_tensor("images", ds.images())])?;
    write_container(dir.join("labels.tnsr"), &[Entry::from_labels("labels", ds.labels())])?;
    let manifest = DatasetManifest {
        classes: ds.classes(),
        modality: ds.modality,
        split: ds.split,
        spec_hash: spec_hash.to_string(),
    };
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads a dataset directory. Any directory with this layout is accepted,
/// whatever produced it.
pub fn read_dataset_dir(dir: impl AsRef<Path>) -> Result<(Dataset, DatasetManifest)> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let manifest = DatasetManifest::parse(&text)?;
    let images = read_container(dir.join("images.tnsr"))?;
    let images = find(&images, "images")?.to_tensor()?;
    let labels = read_container(dir.join("labels.tnsr"))?;
    let labels = find(&labels, "labels")?.to_labels()?;
    let ds = Dataset::new(images, labels, manifest.classes, manifest.split, manifest.modality)?;
    Ok((ds, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let images = Tensor::new(&[3, 1, 2, 2], (0..12).map(|v| v as f64 * 0.5).collect(), DType::F32).unwrap();
        let ds = Dataset::new(images, vec![0, 1, 1], 2, Split::Val, Modality::B).unwrap();
        write_dataset_dir(dir.path(), &ds, "abc").unwrap();
        let (back, manifest) = read_dataset_dir(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(manifest.spec_hash, "abc");
    }

    #[test]
    fn rejects_bad_labels() {
        let images = Tensor::zeros(&[2, 1, 2, 2], DType::F32);
        assert!(Dataset::new(images, vec![0, 2], 2, Split::Full, Modality::A).is_err());
    }

    #[test]
    fn manifest_unknown_key() {
        assert!(DatasetManifest::parse("k = 2\nmodality = A\nsplit = train\ncolour = red\n").is_err());
    }
}
