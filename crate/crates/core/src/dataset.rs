//! Training-set manifests and the rules for what may be trained together.
//!
//! A class label is either a bare disease name (`anthracnose`) or
//! crop-qualified (`watermelon:anthracnose`). One training manifest should
//! hold one disease, one crop and one view.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

pub const DEFAULT_RESOLUTION: (u32, u32) = (1024, 1024);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Field,
    OpenAccess,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Field => "field",
            Source::OpenAccess => "open-access",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "field" => Ok(Source::Field),
            "open-access" => Ok(Source::OpenAccess),
            other => Err(Error::InvalidConfig(format!("unknown image source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum View {
    Canopy,
    CloseUp,
    UnderLeaf,
    Aerial,
}

impl View {
    pub const ALL: [View; 4] = [View::Canopy, View::CloseUp, View::UnderLeaf, View::Aerial];

    pub fn as_str(self) -> &'static str {
        match self {
            View::Canopy => "canopy",
            View::CloseUp => "close-up",
            View::UnderLeaf => "under-leaf",
            View::Aerial => "aerial",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        View::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown view `{s}`")))
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Splits `crop:disease` into its parts; the crop is optional.
pub fn split_class_label(label: &str) -> (Option<&str>, &str) {
    match label.split_once(':') {
        Some((crop, disease)) => (Some(crop), disease),
        None => (None, label),
    }
}

pub fn validate_class_label(label: &str) -> Result<()> {
    let (crop, disease) = split_class_label(label);
    let bad = |s: &str| s.is_empty() || s.contains(['\t', '\n', '\r', ':']);
    if bad(disease) || crop.is_some_and(bad) {
        return Err(Error::InvalidConfig(format!("invalid class label `{label}`")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ManifestEntry {
    pub path: String,
    pub class_label: String,
    pub source: Source,
    pub view: View,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub target_resolution: (u32, u32),
    pub entries: Vec<ManifestEntry>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            target_resolution: DEFAULT_RESOLUTION,
            entries: Vec::new(),
        }
    }
}

impl DatasetManifest {
    pub fn new(target_resolution: (u32, u32)) -> Self {
        Self {
            target_resolution,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    /// More than one disease in one training set.
    MixedClass {
        labels: Vec<String>,
    },
    MixedView {
        views: Vec<View>,
    },
    /// Same or different diseases drawn from more than one crop.
    CrossCrop {
        crops: Vec<String>,
    },
    /// Entry stored at a size other than the manifest's target.
    OffResolution {
        path: String,
        width: u32,
        height: u32,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MixedClass { labels } => write!(f, "mixed classes: {}", labels.join(", ")),
            Violation::MixedView { views } => {
                let names: Vec<&str> = views.iter().map(|v| v.as_str()).collect();
                write!(f, "mixed views: {}", names.join(", "))
            }
            Violation::CrossCrop { crops } => write!(f, "cross-crop mixing: {}", crops.join(", ")),
            Violation::OffResolution { path, width, height } => {
                write!(f, "{path}: stored at {width}x{height}, not the target resolution")
            }
        }
    }
}

fn lint_entries<'a>(entries: impl Iterator<Item = &'a ManifestEntry> + Clone, target: Option<(u32, u32)>) -> Vec<Violation> {
    let mut out = Vec::new();
    let diseases: BTreeSet<String> = entries.clone().map(|e| split_class_label(&e.class_label).1.to_string()).collect();
    if diseases.len() > 1 {
        out.push(Violation::MixedClass {
            labels: diseases.into_iter().collect(),
        });
    }
    let views: BTreeSet<View> = entries.clone().map(|e| e.view).collect();
    if views.len() > 1 {
        out.push(Violation::MixedView {
            views: views.into_iter().collect(),
        });
    }
    let crops: BTreeSet<String> = entries
        .clone()
        .filter_map(|e| split_class_label(&e.class_label).0.map(str::to_string))
        .collect();
    if crops.len() > 1 {
        out.push(Violation::CrossCrop {
            crops: crops.into_iter().collect(),
        });
    }
    if let Some((w, h)) = target {
        let mut off: Vec<Violation> = entries
            .filter(|e| (e.width, e.height) != (w, h))
            .map(|e| Violation::OffResolution {
                path: e.path.clone(),
                width: e.width,
                height: e.height,
            })
            .collect();
        off.sort();
        out.extend(off);
    }
    out
}

/// Lints one manifest. An empty result means the manifest is compliant.
/// The result does not depend on entry order.
pub fn lint_manifest(manifest: &DatasetManifest) -> Vec<Violation> {
    lint_entries(manifest.entries.iter(), Some(manifest.target_resolution))
}

/// Lints the union of several manifests intended for one training run.
pub fn lint_combined(manifests: &[&DatasetManifest]) -> Vec<Violation> {
    let target = manifests.first().map(|m| m.target_resolution);
    let same_target = manifests.iter().all(|m| Some(m.target_resolution) == target);
    lint_entries(manifests.iter().flat_map(|m| m.entries.iter()), if same_target { target } else { None })
}

/// Offset and extent of the largest centered window of the target aspect
/// ratio inside a `width × height` image.
pub fn center_crop_window(width: u32, height: u32, target: (u32, u32)) -> (u32, u32, u32, u32) {
    let (tw, th) = (u64::from(target.0), u64::from(target.1));
    let (w, h) = (u64::from(width), u64::from(height));
    // Compare w/h with tw/th without rounding.
    let (cw, ch) = if w * th > h * tw { ((h * tw) / th, h) } else { (w, (w * th) / tw) };
    let (cw, ch) = (cw.max(1), ch.max(1));
    (((w - cw) / 2) as u32, ((h - ch) / 2) as u32, cw as u32, ch as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn entry(path: &str, class: &str, view: View) -> ManifestEntry {
        ManifestEntry {
            path: path.into(),
            class_label: class.into(),
            source: Source::Field,
            view,
            width: 1024,
            height: 1024,
        }
    }

    fn manifest(entries: Vec<ManifestEntry>) -> DatasetManifest {
        DatasetManifest {
            target_resolution: DEFAULT_RESOLUTION,
            entries,
        }
    }

    #[test]
    fn compliant_manifest() {
        let m = manifest(vec![entry("a.png", "anthracnose", View::CloseUp), entry("b.png", "anthracnose", View::CloseUp)]);
        assert!(lint_manifest(&m).is_empty());
        assert!(lint_manifest(&DatasetManifest::default()).is_empty());
    }

    #[test]
    fn mixed_class_names_both_labels() {
        let m = manifest(vec![
            entry("a.png", "anthracnose", View::CloseUp),
            entry("b.png", "downy-mildew", View::CloseUp),
            entry("c.png", "anthracnose", View::CloseUp),
        ]);
        assert_eq!(
            lint_manifest(&m),
            [Violation::MixedClass {
                labels: vec!["anthracnose".into(), "downy-mildew".into()]
            }]
        );
    }

    #[test]
    fn mixed_view() {
        let m = manifest(vec![entry("a.png", "anthracnose", View::Canopy), entry("b.png", "anthracnose", View::Aerial)]);
        assert_eq!(
            lint_manifest(&m),
            [Violation::MixedView {
                views: vec![View::Canopy, View::Aerial]
            }]
        );
    }

    #[test]
    fn cross_crop_is_flagged_separately() {
        let a = manifest(vec![entry("a.png", "watermelon:anthracnose", View::CloseUp)]);
        let b = manifest(vec![entry("b.png", "cucumber:anthracnose", View::CloseUp)]);
        assert!(lint_manifest(&a).is_empty());
        assert_eq!(
            lint_combined(&[&a, &b]),
            [Violation::CrossCrop {
                crops: vec!["cucumber".into(), "watermelon".into()]
            }]
        );
    }

    #[test]
    fn off_resolution_entries() {
        let mut e = entry("a.png", "anthracnose", View::CloseUp);
        e.width = 512;
        let v = lint_manifest(&manifest(vec![e]));
        assert!(matches!(v.as_slice(), [Violation::OffResolution { width: 512, .. }]));
    }

    #[test]
    fn labels_and_names() {
        assert_eq!(split_class_label("watermelon:anthracnose"), (Some("watermelon"), "anthracnose"));
        assert!(validate_class_label("a:b:c").is_err());
        assert!(validate_class_label(":b").is_err());
        assert!(validate_class_label("downy mildew").is_ok());
        for v in View::ALL {
            assert_eq!(View::parse(v.as_str()).unwrap(), v);
        }
        assert_eq!(Source::parse("open-access").unwrap(), Source::OpenAccess);
    }

    #[test]
    fn crop_windows() {
        assert_eq!(center_crop_window(2048, 1536, (1024, 1024)), (256, 0, 1536, 1536));
        assert_eq!(center_crop_window(1536, 2048, (1024, 1024)), (0, 256, 1536, 1536));
        assert_eq!(center_crop_window(1024, 1024, (1024, 1024)), (0, 0, 1024, 1024));
        assert_eq!(center_crop_window(1000, 500, (32, 16)), (0, 0, 1000, 500));
        assert_eq!(center_crop_window(301, 100, (1, 1)), (100, 0, 100, 100));
    }
}
