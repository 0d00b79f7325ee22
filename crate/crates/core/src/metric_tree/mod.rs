//! Hierarchical repository of object-size priors.
//!
//! Every node is a category. Leaves carry size samples (millimeters) and a
//! fitted mixture over the dimensions named by the node's `dim_mask`; inner
//! nodes see the union of their descendants' samples.

mod fit;
mod gmm;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use fit::{fit_gmm, FitOptions, FitReport, DEFAULT_MAX_COMPONENTS, MIN_SAMPLES};
pub use gmm::{Gmm, GmmFile, COV_FLOOR};

use crate::error::{Error, Result};

pub const MAX_DEPTH: usize = 5;
pub const FORMAT_VERSION: u32 = 1;

/// One object dimension. Length is the larger horizontal extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dim {
    #[serde(rename = "w")]
    W,
    #[serde(rename = "l")]
    L,
    #[serde(rename = "h")]
    H,
}

impl Dim {
    pub const ALL: [Dim; 3] = [Dim::W, Dim::L, Dim::H];

    /// Column of this dimension in a `[w, l, h]` sample.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dim::W => "w",
            Dim::L => "l",
            Dim::H => "h",
        }
    }
}

/// Subset of {W, L, H}, always iterated in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DimMask(u8);

impl DimMask {
    pub const ALL: DimMask = DimMask(0b111);

    pub fn new(dims: &[Dim]) -> Self {
        DimMask(dims.iter().fold(0, |acc, d| acc | (1 << d.index())))
    }

    pub fn contains(self, dim: Dim) -> bool {
        self.0 & (1 << dim.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Dim> {
        Dim::ALL.into_iter().filter(move |d| self.contains(*d))
    }

    /// Position of `dim` among the mask's dimensions (the prior's axis index).
    pub fn position(self, dim: Dim) -> Option<usize> {
        self.iter().position(|d| d == dim)
    }

    pub fn intersect(self, other: DimMask) -> DimMask {
        DimMask(self.0 & other.0)
    }
}

impl fmt::Display for DimMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(Dim::as_str).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

/// Slash-separated path of category names below the repository root.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CategoryPath(Vec<String>);

impl CategoryPath {
    pub fn new(parts: Vec<String>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::EmptyPath);
        }
        if parts.iter().any(|p| p.is_empty() || p.contains('/')) {
            return Err(Error::InvalidInput(format!("bad category path {parts:?}")));
        }
        Ok(Self(parts))
    }

    pub fn parse(s: &str) -> Result<Self> {
        let trimmed = s.trim().trim_matches('/');
        if trimmed.is_empty() {
            return Err(Error::EmptyPath);
        }
        Self::new(trimmed.split('/').map(str::to_owned).collect())
    }

    pub fn parts(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for CategoryPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

impl TryFrom<String> for CategoryPath {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        CategoryPath::parse(&s)
    }
}

impl From<CategoryPath> for String {
    fn from(p: CategoryPath) -> String {
        p.to_string()
    }
}

/// A `[w, l, h]` size in millimeters; `None` marks a dimension outside the mask.
pub type SizeSample = [Option<f64>; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryNode {
    name: String,
    dim_mask: DimMask,
    samples: Vec<SizeSample>,
    images: Vec<String>,
    prior: Option<Gmm>,
    children: Vec<CategoryNode>,
}

impl CategoryNode {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim_mask(&self) -> DimMask {
        self.dim_mask
    }

    pub fn children(&self) -> &[CategoryNode] {
        &self.children
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Samples attached to this node only.
    pub fn own_samples(&self) -> &[SizeSample] {
        &self.samples
    }

    pub fn images(&self) -> &[String] {
        &self.images
    }

    /// Own samples followed by every descendant's, depth first.
    pub fn samples(&self) -> Vec<SizeSample> {
        let mut out = self.samples.clone();
        for c in &self.children {
            out.extend(c.samples());
        }
        out
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len() + self.children.iter().map(CategoryNode::sample_count).sum::<usize>()
    }

    /// Samples restricted to the mask dimensions, skipping any with a missing value.
    pub fn mask_samples(&self) -> Vec<Vec<f64>> {
        let mask = self.dim_mask;
        self.samples()
            .iter()
            .filter_map(|s| mask.iter().map(|d| s[d.index()]).collect::<Option<Vec<f64>>>())
            .collect()
    }

    /// Fitted prior over `dim_mask`, if the node has enough samples.
    pub fn prior(&self) -> Option<&Gmm> {
        self.prior.as_ref()
    }

    pub fn child(&self, name: &str) -> Option<&CategoryNode> {
        self.children.iter().find(|c| c.name == name)
    }

    /// Depth-first walk yielding each node with its path below the root.
    pub fn walk(&self) -> Vec<(Vec<&str>, &CategoryNode)> {
        fn go<'a>(node: &'a CategoryNode, prefix: &mut Vec<&'a str>, out: &mut Vec<(Vec<&'a str>, &'a CategoryNode)>) {
            for c in &node.children {
                prefix.push(&c.name);
                out.push((prefix.clone(), c));
                go(c, prefix, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        go(self, &mut Vec::new(), &mut out);
        out
    }

    /// Leaves that have a prior, with their paths.
    pub fn leaves_with_prior(&self) -> Vec<(CategoryPath, &CategoryNode)> {
        self.walk()
            .into_iter()
            .filter(|(_, n)| n.is_leaf() && n.prior.is_some())
            .map(|(p, n)| {
                let path = CategoryPath::new(p.into_iter().map(str::to_owned).collect())
                    .expect("walk paths are non-empty");
                (path, n)
            })
            .collect()
    }

    fn depth(&self) -> usize {
        1 + self.children.iter().map(CategoryNode::depth).max().unwrap_or(0)
    }
}

/// Descends from `root` by child name.
pub fn lookup<'a, S: AsRef<str>>(root: &'a CategoryNode, path: &[S]) -> Result<&'a CategoryNode> {
    if path.is_empty() {
        return Err(Error::EmptyPath);
    }
    let mut node = root;
    for (i, name) in path.iter().enumerate() {
        node = node.child(name.as_ref()).ok_or_else(|| {
            let walked: Vec<&str> = path[..=i].iter().map(AsRef::as_ref).collect();
            Error::UnknownCategory(walked.join("/"))
        })?;
    }
    Ok(node)
}

pub fn lookup_path<'a>(root: &'a CategoryNode, path: &CategoryPath) -> Result<&'a CategoryNode> {
    lookup(root, path.parts())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RepoFile {
    version: u32,
    tree: NodeFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NodeFile {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim_mask: Option<Vec<Dim>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    samples: Vec<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gmm: Option<GmmFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    images: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<NodeFile>,
}

/// Builds a validated tree from the priors JSON text, fitting any prior that
/// is not already serialized.
pub fn parse_repository(text: &str, opts: &FitOptions) -> Result<CategoryNode> {
    let file: RepoFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("priors file: {e}")))?;
    if file.version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported priors version {} (expected {FORMAT_VERSION})",
            file.version
        )));
    }
    let root = build_node(file.tree, opts)?;
    if root.depth() > MAX_DEPTH {
        return Err(Error::InvalidInput(format!(
            "tree depth {} exceeds {MAX_DEPTH} levels",
            root.depth()
        )));
    }
    Ok(root)
}

pub fn load_repository(path: &Path) -> Result<CategoryNode> {
    load_repository_with(path, &FitOptions::default())
}

pub fn load_repository_with(path: &Path, opts: &FitOptions) -> Result<CategoryNode> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_repository(&text, opts)
}

fn build_node(file: NodeFile, opts: &FitOptions) -> Result<CategoryNode> {
    if file.name.is_empty() || file.name.contains('/') {
        return Err(Error::InvalidInput(format!("bad category name {:?}", file.name)));
    }
    let mut samples = Vec::with_capacity(file.samples.len());
    for s in &file.samples {
        if s.len() != 3 {
            return Err(Error::InvalidInput(format!(
                "{}: sample {s:?} must have 3 entries",
                file.name
            )));
        }
        if s.iter().flatten().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "{}: sample {s:?} has a non-positive size",
                file.name
            )));
        }
        samples.push([s[0], s[1], s[2]]);
    }
    let dim_mask = match &file.dim_mask {
        Some(dims) => DimMask::new(dims),
        None => {
            // Default to the dimensions present in every sample.
            let present: Vec<Dim> = Dim::ALL
                .into_iter()
                .filter(|d| samples.iter().all(|s| s[d.index()].is_some()))
                .collect();
            DimMask::new(&present)
        }
    };
    if dim_mask.is_empty() {
        return Err(Error::InvalidInput(format!("{}: dim_mask is empty", file.name)));
    }
    for s in &samples {
        if let Some(d) = Dim::ALL
            .into_iter()
            .find(|d| s[d.index()].is_none() && dim_mask.contains(*d))
        {
            return Err(Error::InvalidInput(format!(
                "{}: sample {s:?} is missing {} which dim_mask {dim_mask} requires",
                file.name,
                d.as_str()
            )));
        }
    }

    let mut children = Vec::with_capacity(file.children.len());
    for c in file.children {
        if children.iter().any(|x: &CategoryNode| x.name == c.name) {
            return Err(Error::DuplicateSibling(c.name));
        }
        children.push(build_node(c, opts)?);
    }

    let mut node = CategoryNode {
        name: file.name,
        dim_mask,
        samples,
        images: file.images,
        prior: None,
        children,
    };
    node.prior = match file.gmm {
        Some(g) => {
            let gmm = Gmm::from_file(&g)?;
            if gmm.dims() != dim_mask.len() {
                return Err(Error::InvalidGmm(format!(
                    "{}: prior has {} dims but dim_mask {dim_mask} has {}",
                    node.name,
                    gmm.dims(),
                    dim_mask.len()
                )));
            }
            if node.is_leaf() && node.samples.len() < opts.min_samples {
                return Err(Error::InvalidGmm(format!(
                    "{}: leaf prior backed by {} samples, need {}",
                    node.name,
                    node.samples.len(),
                    opts.min_samples
                )));
            }
            Some(gmm)
        }
        None => {
            let data = node.mask_samples();
            if data.len() >= opts.min_samples {
                Some(fit_gmm(&data, opts)?.gmm)
            } else {
                None
            }
        }
    };
    Ok(node)
}

fn to_node_file(node: &CategoryNode) -> NodeFile {
    NodeFile {
        name: node.name.clone(),
        dim_mask: Some(node.dim_mask.iter().collect()),
        samples: node.samples.iter().map(|s| s.to_vec()).collect(),
        gmm: node.prior.as_ref().map(Gmm::to_file),
        images: node.images.clone(),
        children: node.children.iter().map(to_node_file).collect(),
    }
}

/// Serializes the tree, including fitted priors.
pub fn repository_to_json(root: &CategoryNode) -> Result<String> {
    crate::json::to_json_string(&RepoFile {
        version: FORMAT_VERSION,
        tree: to_node_file(root),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf_json(name: &str, n: usize, base: f64) -> String {
        let samples: Vec<String> = (0..n)
            .map(|i| {
                let v = base + (i % 7) as f64 * 3.0 + (i % 3) as f64;
                format!("[{}, {}, {}]", v * 0.5, v, v * 2.0)
            })
            .collect();
        format!(
            r#"{{"name": "{name}", "dim_mask": ["w","l","h"], "samples": [{}]}}"#,
            samples.join(",")
        )
    }

    fn wrap(tree: &str) -> String {
        format!(r#"{{"version": 1, "tree": {tree}}}"#)
    }

    #[test]
    fn minimal_repository() {
        let text = wrap(&format!(
            r#"{{"name": "root", "dim_mask": ["w","l","h"], "children": [{}]}}"#,
            leaf_json("bottle", 30, 100.0)
        ));
        let root = parse_repository(&text, &FitOptions::default()).unwrap();
        assert_eq!(root.walk().len() + 1, 2);
        let bottle = lookup(&root, &["bottle"]).unwrap();
        assert!(bottle.is_leaf());
        assert_eq!(bottle.prior().unwrap().dims(), 3);
    }

    #[test]
    fn duplicate_siblings_rejected() {
        let text = wrap(&format!(
            r#"{{"name": "root", "dim_mask": ["h"], "children": [{}, {}]}}"#,
            leaf_json("chair", 12, 400.0),
            leaf_json("chair", 12, 500.0)
        ));
        assert!(matches!(
            parse_repository(&text, &FitOptions::default()),
            Err(Error::DuplicateSibling(n)) if n == "chair"
        ));
    }

    #[test]
    fn lookup_and_aggregation() {
        let text = wrap(&format!(
            r#"{{"name": "root", "dim_mask": ["h"], "children": [
                {{"name": "furniture", "dim_mask": ["w","l","h"], "children": [{}, {}]}}
            ]}}"#,
            leaf_json("chair", 12, 400.0),
            leaf_json("table", 15, 700.0)
        ));
        let root = parse_repository(&text, &FitOptions::default()).unwrap();
        assert_eq!(lookup(&root, &["furniture", "chair"]).unwrap().name(), "chair");
        let furniture = lookup(&root, &["furniture"]).unwrap();
        assert_eq!(furniture.sample_count(), 27);
        assert_eq!(furniture.samples().len(), 27);
        assert!(furniture.prior().is_some());
        assert!(matches!(lookup::<&str>(&root, &[]), Err(Error::EmptyPath)));
        assert!(matches!(
            lookup(&root, &["furniture", "sofa"]),
            Err(Error::UnknownCategory(p)) if p == "furniture/sofa"
        ));
    }

    #[test]
    fn small_leaf_has_no_prior() {
        let text = wrap(&format!(
            r#"{{"name": "root", "dim_mask": ["h"], "children": [{}]}}"#,
            leaf_json("rare", 5, 100.0)
        ));
        let root = parse_repository(&text, &FitOptions::default()).unwrap();
        assert!(lookup(&root, &["rare"]).unwrap().prior().is_none());
    }

    #[test]
    fn nulls_must_match_mask() {
        let bad = wrap(
            r#"{"name": "root", "dim_mask": ["h"], "children": [
                {"name": "person", "dim_mask": ["h"], "samples": [[null, null, 1700], [400, null, null]]}
            ]}"#,
        );
        assert!(parse_repository(&bad, &FitOptions::default()).is_err());
        let ok = wrap(
            r#"{"name": "root", "dim_mask": ["h"], "children": [
                {"name": "person", "samples": [[null, null, 1700], [null, null, 1650]]}
            ]}"#,
        );
        let root = parse_repository(&ok, &FitOptions::default()).unwrap();
        assert_eq!(lookup(&root, &["person"]).unwrap().dim_mask(), DimMask::new(&[Dim::H]));
    }

    #[test]
    fn depth_limit() {
        let mut tree = leaf_json("leaf", 10, 100.0);
        for i in 0..5 {
            tree = format!(r#"{{"name": "n{i}", "dim_mask": ["h"], "children": [{tree}]}}"#);
        }
        assert!(parse_repository(&wrap(&tree), &FitOptions::default()).is_err());
    }

    #[test]
    fn serialized_priors_round_trip() {
        let text = wrap(&format!(
            r#"{{"name": "root", "dim_mask": ["w","l","h"], "children": [{}]}}"#,
            leaf_json("bottle", 30, 100.0)
        ));
        let root = parse_repository(&text, &FitOptions::default()).unwrap();
        let again = parse_repository(&repository_to_json(&root).unwrap(), &FitOptions::default()).unwrap();
        let (a, b) = (
            lookup(&root, &["bottle"]).unwrap(),
            lookup(&again, &["bottle"]).unwrap(),
        );
        assert_eq!(a.own_samples(), b.own_samples());
        assert_eq!(a.dim_mask(), b.dim_mask());
        let (ga, gb) = (a.prior().unwrap(), b.prior().unwrap());
        assert_eq!(ga.n_components(), gb.n_components());
        for x in [[55.0, 110.0, 220.0], [60.0, 100.0, 230.0]] {
            let (da, db) = (ga.log_density(&x).unwrap(), gb.log_density(&x).unwrap());
            assert!((da - db).abs() <= 1e-12 * da.abs().max(1.0));
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let text = r#"{"version": 2, "tree": {"name": "root", "dim_mask": ["h"]}}"#;
        assert!(matches!(
            parse_repository(text, &FitOptions::default()),
            Err(Error::Parse(_))
        ));
    }
}
