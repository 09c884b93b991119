use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::EmbeddingSet;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("invalid taxonomy json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate taxonomy path {0:?}")]
    DuplicatePath(Vec<String>),
    #[error("taxonomy has no nodes")]
    Empty,
    #[error("row {row}: path {path:?} is not a leaf of the taxonomy")]
    UnknownLeaf { row: usize, path: Vec<String> },
}

/// On-disk node shape: `{"name": "...", "children": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyNodeJson {
    pub name: String,
    #[serde(default)]
    pub children: Vec<TaxonomyNodeJson>,
}

/// Index of a node. Ids are assigned in pre-order, so the subtree of `n`
/// occupies the contiguous id range `n..subtree_end(n)`.
pub type NodeId = usize;

#[derive(Debug, Clone)]
struct Node {
    name: String,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    depth: usize,
    end: NodeId,
}

/// Rooted, ordered tree of named taxa.
///
/// Names may repeat across branches; a node is identified by its full path
/// from the root, and sibling names must be unique.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    nodes: Vec<Node>,
    leaves: Vec<NodeId>,
}

impl Taxonomy {
    pub fn from_json_tree(root: &TaxonomyNodeJson) -> Result<Self, TaxonomyError> {
        let mut tax = Taxonomy {
            nodes: Vec::new(),
            leaves: Vec::new(),
        };
        tax.push(root, None, 0)?;
        Ok(tax)
    }

    fn push(&mut self, json: &TaxonomyNodeJson, parent: Option<NodeId>, depth: usize) -> Result<NodeId, TaxonomyError> {
        let id = self.nodes.len();
        self.nodes.push(Node {
            name: json.name.clone(),
            parent,
            children: Vec::with_capacity(json.children.len()),
            depth,
            end: id + 1,
        });
        let mut names = HashSet::with_capacity(json.children.len());
        for child in &json.children {
            if !names.insert(child.name.as_str()) {
                let mut path = self.path(id);
                path.push(child.name.clone());
                return Err(TaxonomyError::DuplicatePath(path));
            }
            let c = self.push(child, Some(id), depth + 1)?;
            self.nodes[id].children.push(c);
        }
        if json.children.is_empty() {
            self.leaves.push(id);
        }
        self.nodes[id].end = self.nodes.len();
        Ok(id)
    }

    /// Builds the tree spanned by a collection of root-to-leaf paths. Children
    /// appear in first-occurrence order.
    pub fn from_paths<I, P, S>(paths: I) -> Result<Self, TaxonomyError>
    where
        I: IntoIterator<Item = P>,
        P: AsRef<[S]>,
        S: AsRef<str>,
    {
        let mut root: Option<TaxonomyNodeJson> = None;
        for path in paths {
            let path = path.as_ref();
            let Some((first, rest)) = path.split_first() else {
                continue;
            };
            let node = root.get_or_insert_with(|| TaxonomyNodeJson {
                name: first.as_ref().to_string(),
                children: Vec::new(),
            });
            if node.name != first.as_ref() {
                return Err(TaxonomyError::DuplicatePath(vec![first.as_ref().to_string()]));
            }
            let mut cur = node;
            for seg in rest {
                let seg = seg.as_ref();
                let pos = match cur.children.iter().position(|c| c.name == seg) {
                    Some(p) => p,
                    None => {
                        cur.children.push(TaxonomyNodeJson {
                            name: seg.to_string(),
                            children: Vec::new(),
                        });
                        cur.children.len() - 1
                    }
                };
                cur = &mut cur.children[pos];
            }
        }
        Self::from_json_tree(&root.ok_or(TaxonomyError::Empty)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self, TaxonomyError> {
        Self::from_json_tree(&serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_tree(&self) -> TaxonomyNodeJson {
        self.json_of(self.root())
    }

    fn json_of(&self, id: NodeId) -> TaxonomyNodeJson {
        TaxonomyNodeJson {
            name: self.nodes[id].name.clone(),
            children: self.nodes[id].children.iter().map(|&c| self.json_of(c)).collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TaxonomyError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_json_tree())?;
        fs::write(path, text).map_err(|source| TaxonomyError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id].name
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].children
    }

    pub fn depth(&self, id: NodeId) -> usize {
        self.nodes[id].depth
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id].children.is_empty()
    }

    /// Exclusive end of `id`'s pre-order subtree range.
    pub fn subtree_end(&self, id: NodeId) -> NodeId {
        self.nodes[id].end
    }

    pub fn in_subtree(&self, node: NodeId, ancestor: NodeId) -> bool {
        (ancestor..self.nodes[ancestor].end).contains(&node)
    }

    /// Leaves in pre-order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    /// Leaves under `id` (including `id` itself when it is a leaf).
    pub fn leaves_under(&self, id: NodeId) -> &[NodeId] {
        let lo = self.leaves.partition_point(|&l| l < id);
        let hi = self.leaves.partition_point(|&l| l < self.nodes[id].end);
        &self.leaves[lo..hi]
    }

    /// The `level`-th ancestor: 0 is the node itself, 1 its parent, and so on.
    pub fn ancestor(&self, id: NodeId, level: usize) -> Option<NodeId> {
        let mut cur = id;
        for _ in 0..level {
            cur = self.nodes[cur].parent?;
        }
        Some(cur)
    }

    /// Root-to-node names.
    pub fn path(&self, id: NodeId) -> Vec<String> {
        let mut out = Vec::with_capacity(self.nodes[id].depth + 1);
        let mut cur = Some(id);
        while let Some(n) = cur {
            out.push(self.nodes[n].name.clone());
            cur = self.nodes[n].parent;
        }
        out.reverse();
        out
    }

    pub fn find_path<S: AsRef<str>>(&self, path: &[S]) -> Option<NodeId> {
        let (first, rest) = path.split_first()?;
        if self.nodes.first()?.name != first.as_ref() {
            return None;
        }
        let mut cur = self.root();
        for seg in rest {
            cur = *self.nodes[cur]
                .children
                .iter()
                .find(|&&c| self.nodes[c].name == seg.as_ref())?;
        }
        Some(cur)
    }

    /// Resolves every row's taxonomy path to a leaf node.
    pub fn leaf_of_rows(&self, set: &EmbeddingSet) -> Result<Vec<NodeId>, TaxonomyError> {
        let paths = set.taxonomy_paths().unwrap_or(&[]);
        paths
            .iter()
            .enumerate()
            .map(|(row, path)| match self.find_path(path) {
                Some(id) if self.is_leaf(id) => Ok(id),
                _ => Err(TaxonomyError::UnknownLeaf {
                    row,
                    path: path.clone(),
                }),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TOY: &str = r#"{"name":"root","children":[
        {"name":"A","children":[{"name":"a1"},{"name":"a2"}]},
        {"name":"B","children":[{"name":"b1"},{"name":"b2"}]}]}"#;

    #[test]
    fn preorder_ids_and_subtrees() {
        let t = Taxonomy::from_json_str(TOY).unwrap();
        assert_eq!(t.len(), 7);
        let a = t.find_path(&["root", "A"]).unwrap();
        let b1 = t.find_path(&["root", "B", "b1"]).unwrap();
        assert_eq!(t.leaves().len(), 4);
        assert_eq!(t.leaves_under(a).len(), 2);
        assert!(!t.in_subtree(b1, a));
        assert_eq!(t.ancestor(b1, 1).map(|n| t.name(n)), Some("B"));
        assert_eq!(t.ancestor(b1, 2), Some(t.root()));
        assert_eq!(t.ancestor(b1, 3), None);
        assert_eq!(t.path(b1), vec!["root", "B", "b1"]);
    }

    #[test]
    fn repeated_names_allowed_across_branches() {
        let t = Taxonomy::from_json_str(
            r#"{"name":"r","children":[{"name":"A","children":[{"name":"x"}]},{"name":"B","children":[{"name":"x"}]}]}"#,
        )
        .unwrap();
        assert_ne!(t.find_path(&["r", "A", "x"]), t.find_path(&["r", "B", "x"]));
    }

    #[test]
    fn duplicate_siblings_rejected() {
        let err = Taxonomy::from_json_str(r#"{"name":"r","children":[{"name":"x"},{"name":"x"}]}"#).unwrap_err();
        assert!(matches!(err, TaxonomyError::DuplicatePath(p) if p == vec!["r", "x"]));
    }

    #[test]
    fn from_paths_matches_json() {
        let t = Taxonomy::from_paths([
            vec!["root", "A", "a1"],
            vec!["root", "A", "a2"],
            vec!["root", "B", "b1"],
            vec!["root", "B", "b2"],
        ])
        .unwrap();
        assert_eq!(t.to_json_tree(), Taxonomy::from_json_str(TOY).unwrap().to_json_tree());
    }
}
