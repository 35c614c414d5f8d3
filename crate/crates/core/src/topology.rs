//! Capacity-annotated network graph and deterministic shortest-path routing.
//!
//! The graph is undirected; every link carries one symmetric capacity. Routes
//! are minimum-hop (all links weigh the same) and capacities only constrain
//! rates. When several predecessors sit at the same distance, the
//! lexicographically smallest node name wins, so a route is a pure function of
//! the topology.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{gbps, Rate, UNBOUNDED};

/// Current version of the topology file schema.
pub const TOPOLOGY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("malformed topology document: {0}")]
    MalformedDocument(String),
    #[error("unsupported topology format_version {0}")]
    UnsupportedVersion(u32),
    #[error("node name must not be empty")]
    EmptyName,
    #[error("duplicate node name or alias `{0}`")]
    DuplicateNode(String),
    #[error("link references unknown node `{0}`")]
    DanglingEndpoint(String),
    #[error("duplicate link between `{0}` and `{1}`")]
    DuplicateLink(String, String),
    #[error("link from `{0}` to itself")]
    SelfLoop(String),
    #[error("link `{a}`-`{b}` has non-positive capacity {capacity_gbps} Gb/s")]
    NonPositiveCapacity { a: String, b: String, capacity_gbps: f64 },
    #[error("site `{0}` must have at most one access link")]
    SiteNotLeaf(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("no route from `{0}` to `{1}`")]
    NoRoute(String, String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
}

/// Unique node name.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(name: impl Into<String>) -> Self {
        NodeId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for NodeId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Site,
    Router,
}

/// Index of a link in declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub usize);

/// Undirected link; endpoints are stored with `a < b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    pub capacity: Rate,
}

impl Link {
    pub fn other(&self, node: &NodeId) -> Option<&NodeId> {
        if &self.a == node {
            Some(&self.b)
        } else if &self.b == node {
            Some(&self.a)
        } else {
            None
        }
    }

    pub fn touches(&self, node: &NodeId) -> bool {
        &self.a == node || &self.b == node
    }
}

/// An ordered route through the topology.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Path {
    pub hops: Vec<NodeId>,
    pub links: Vec<LinkId>,
}

impl Path {
    pub fn src(&self) -> &NodeId {
        &self.hops[0]
    }

    pub fn dst(&self) -> &NodeId {
        &self.hops[self.hops.len() - 1]
    }

    pub fn is_identity(&self) -> bool {
        self.links.is_empty()
    }

    pub fn uses(&self, link: LinkId) -> bool {
        self.links.contains(&link)
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, hop) in self.hops.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(hop.as_str())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDecl {
    pub name: String,
    pub kind: NodeKind,
    /// Alternate names accepted wherever a node is referenced by name.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDecl {
    pub a: String,
    pub b: String,
    pub capacity_gbps: f64,
}

/// On-disk topology schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDocument {
    #[serde(default = "default_version")]
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub nodes: Vec<NodeDecl>,
    #[serde(default)]
    pub links: Vec<LinkDecl>,
}

fn default_version() -> u32 {
    TOPOLOGY_FORMAT_VERSION
}

#[derive(Clone, Debug)]
struct NodeEntry {
    id: NodeId,
    kind: NodeKind,
}

/// Validated, immutable network graph.
///
/// Nodes are kept sorted by name so that index order equals lexicographic
/// order, which is what the routing tie-break compares.
#[derive(Clone, Debug)]
pub struct Topology {
    nodes: Vec<NodeEntry>,
    index: BTreeMap<String, usize>,
    aliases: BTreeMap<String, usize>,
    links: Vec<Link>,
    adjacency: Vec<Vec<(usize, LinkId)>>,
    pairs: BTreeMap<(usize, usize), LinkId>,
}

impl Topology {
    pub fn from_document(doc: &TopologyDocument) -> Result<Self, TopologyError> {
        if doc.format_version != TOPOLOGY_FORMAT_VERSION {
            return Err(TopologyError::UnsupportedVersion(doc.format_version));
        }
        let mut sorted: Vec<&NodeDecl> = doc.nodes.iter().collect();
        sorted.sort_by(|x, y| x.name.cmp(&y.name));

        let mut nodes = Vec::with_capacity(sorted.len());
        let mut index = BTreeMap::new();
        for decl in &sorted {
            if decl.name.is_empty() {
                return Err(TopologyError::EmptyName);
            }
            if index.insert(decl.name.clone(), nodes.len()).is_some() {
                return Err(TopologyError::DuplicateNode(decl.name.clone()));
            }
            nodes.push(NodeEntry {
                id: NodeId::new(decl.name.clone()),
                kind: decl.kind,
            });
        }
        let mut aliases = BTreeMap::new();
        for decl in &sorted {
            let target = index[&decl.name];
            for alias in &decl.aliases {
                if alias.is_empty() {
                    return Err(TopologyError::EmptyName);
                }
                if index.contains_key(alias) || aliases.insert(alias.clone(), target).is_some() {
                    return Err(TopologyError::DuplicateNode(alias.clone()));
                }
            }
        }

        let mut links = Vec::with_capacity(doc.links.len());
        let mut adjacency = vec![Vec::new(); nodes.len()];
        let mut pairs = BTreeMap::new();
        for decl in &doc.links {
            let ia = *index
                .get(&decl.a)
                .ok_or_else(|| TopologyError::DanglingEndpoint(decl.a.clone()))?;
            let ib = *index
                .get(&decl.b)
                .ok_or_else(|| TopologyError::DanglingEndpoint(decl.b.clone()))?;
            if ia == ib {
                return Err(TopologyError::SelfLoop(decl.a.clone()));
            }
            if !(decl.capacity_gbps > 0.0) || !decl.capacity_gbps.is_finite() {
                return Err(TopologyError::NonPositiveCapacity {
                    a: decl.a.clone(),
                    b: decl.b.clone(),
                    capacity_gbps: decl.capacity_gbps,
                });
            }
            let (lo, hi) = if ia < ib { (ia, ib) } else { (ib, ia) };
            let id = LinkId(links.len());
            if pairs.insert((lo, hi), id).is_some() {
                return Err(TopologyError::DuplicateLink(
                    nodes[lo].id.0.clone(),
                    nodes[hi].id.0.clone(),
                ));
            }
            adjacency[lo].push((hi, id));
            adjacency[hi].push((lo, id));
            links.push(Link {
                a: nodes[lo].id.clone(),
                b: nodes[hi].id.clone(),
                capacity: gbps(decl.capacity_gbps),
            });
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.kind == NodeKind::Site && adjacency[i].len() > 1 {
                return Err(TopologyError::SiteNotLeaf(node.id.0.clone()));
            }
        }
        for adj in &mut adjacency {
            adj.sort();
        }
        Ok(Topology {
            nodes,
            index,
            aliases,
            links,
            adjacency,
            pairs,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, TopologyError> {
        let doc: TopologyDocument =
            serde_json::from_str(text).map_err(|e| TopologyError::MalformedDocument(e.to_string()))?;
        Self::from_document(&doc)
    }

    /// Reads and validates a topology file.
    pub fn load(path: impl AsRef<FsPath>) -> Result<Self, TopologyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| TopologyError::MalformedDocument(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeId, NodeKind)> {
        self.nodes.iter().map(|n| (&n.id, n.kind))
    }

    pub fn sites(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Site).map(|n| &n.id)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn link_ids(&self) -> impl Iterator<Item = LinkId> {
        (0..self.links.len()).map(LinkId)
    }

    /// Resolves a node name or alias to its canonical id.
    pub fn resolve(&self, name: &str) -> Result<&NodeId, TopologyError> {
        self.position(name).map(|i| &self.nodes[i].id)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_ok()
    }

    pub fn kind(&self, name: &str) -> Result<NodeKind, TopologyError> {
        self.position(name).map(|i| self.nodes[i].kind)
    }

    pub fn link_between(&self, a: &str, b: &str) -> Option<LinkId> {
        let ia = self.position(a).ok()?;
        let ib = self.position(b).ok()?;
        let key = if ia < ib { (ia, ib) } else { (ib, ia) };
        self.pairs.get(&key).copied()
    }

    /// Links incident to a node.
    pub fn incident(&self, name: &str) -> Result<Vec<LinkId>, TopologyError> {
        let i = self.position(name)?;
        Ok(self.adjacency[i].iter().map(|&(_, l)| l).collect())
    }

    /// Capacity of a site's single access link, if it has one.
    pub fn access_capacity(&self, site: &str) -> Result<Option<Rate>, TopologyError> {
        let i = self.position(site)?;
        Ok(self.adjacency[i].first().map(|&(_, l)| self.links[l.0].capacity))
    }

    fn position(&self, name: &str) -> Result<usize, TopologyError> {
        self.index
            .get(name)
            .or_else(|| self.aliases.get(name))
            .copied()
            .ok_or_else(|| TopologyError::UnknownNode(name.to_owned()))
    }

    /// Minimum-hop route with lexicographic predecessor tie-breaking.
    pub fn shortest_path(&self, src: &str, dst: &str) -> Result<Path, TopologyError> {
        let s = self.position(src)?;
        let d = self.position(dst)?;
        let n = self.nodes.len();
        let mut dist = vec![usize::MAX; n];
        let mut pred: Vec<Option<(usize, LinkId)>> = vec![None; n];
        let mut settled = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[s] = 0;
        heap.push(Reverse((0usize, s)));
        while let Some(Reverse((du, u))) = heap.pop() {
            if settled[u] {
                continue;
            }
            settled[u] = true;
            if u == d {
                break;
            }
            for &(v, link) in &self.adjacency[u] {
                if settled[v] {
                    continue;
                }
                let dv = du + 1;
                if dv < dist[v] {
                    dist[v] = dv;
                    pred[v] = Some((u, link));
                    heap.push(Reverse((dv, v)));
                } else if dv == dist[v] {
                    // equal length: keep the lexicographically smaller predecessor
                    if let Some((p, _)) = pred[v] {
                        if u < p {
                            pred[v] = Some((u, link));
                        }
                    }
                }
            }
        }
        if dist[d] == usize::MAX {
            return Err(TopologyError::NoRoute(
                self.nodes[s].id.0.clone(),
                self.nodes[d].id.0.clone(),
            ));
        }
        let mut hops = vec![self.nodes[d].id.clone()];
        let mut links = Vec::new();
        let mut cur = d;
        while let Some((p, link)) = pred[cur] {
            hops.push(self.nodes[p].id.clone());
            links.push(link);
            cur = p;
        }
        hops.reverse();
        links.reverse();
        Ok(Path { hops, links })
    }

    /// Builds a path from an explicit hop list, checking adjacency and
    /// repeated nodes.
    pub fn path_from_hops<S: AsRef<str>>(&self, hops: &[S]) -> Result<Path, TopologyError> {
        if hops.is_empty() {
            return Err(TopologyError::InvalidPath("empty hop list".into()));
        }
        let mut idx = Vec::with_capacity(hops.len());
        for h in hops {
            idx.push(self.position(h.as_ref())?);
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut links = Vec::with_capacity(idx.len() - 1);
        for (k, &i) in idx.iter().enumerate() {
            if seen[i] {
                return Err(TopologyError::InvalidPath(format!(
                    "node `{}` repeated",
                    self.nodes[i].id
                )));
            }
            seen[i] = true;
            if k > 0 {
                let p = idx[k - 1];
                let key = if p < i { (p, i) } else { (i, p) };
                let link = self.pairs.get(&key).ok_or_else(|| {
                    TopologyError::InvalidPath(format!(
                        "`{}` and `{}` are not adjacent",
                        self.nodes[p].id, self.nodes[i].id
                    ))
                })?;
                links.push(*link);
            }
        }
        Ok(Path {
            hops: idx.iter().map(|&i| self.nodes[i].id.clone()).collect(),
            links,
        })
    }

    /// Smallest link capacity along `path`; [`UNBOUNDED`] for the identity path.
    pub fn path_bottleneck(&self, path: &Path) -> Result<Rate, TopologyError> {
        self.check_path(path)?;
        Ok(path
            .links
            .iter()
            .map(|l| self.links[l.0].capacity)
            .fold(UNBOUNDED, f64::min))
    }

    /// Verifies that a path's links and hops agree with this topology.
    pub fn check_path(&self, path: &Path) -> Result<(), TopologyError> {
        if path.hops.is_empty() || path.links.len() + 1 != path.hops.len() {
            return Err(TopologyError::InvalidPath("hop and link counts disagree".into()));
        }
        let rebuilt = self.path_from_hops(&path.hops)?;
        if rebuilt.links != path.links {
            return Err(TopologyError::InvalidPath("links do not match hops".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(nodes: &[(&str, NodeKind)], links: &[(&str, &str, f64)]) -> TopologyDocument {
        TopologyDocument {
            format_version: 1,
            description: None,
            nodes: nodes
                .iter()
                .map(|&(n, k)| NodeDecl {
                    name: n.into(),
                    kind: k,
                    aliases: vec![],
                })
                .collect(),
            links: links
                .iter()
                .map(|&(a, b, c)| LinkDecl {
                    a: a.into(),
                    b: b.into(),
                    capacity_gbps: c,
                })
                .collect(),
        }
    }

    use NodeKind::{Router, Site};

    #[test]
    fn single_isolated_node() {
        let t = Topology::from_document(&doc(&[("x", Router)], &[])).unwrap();
        assert_eq!(t.node_count(), 1);
        assert!(t.links().is_empty());
        let p = t.shortest_path("x", "x").unwrap();
        assert_eq!(p.hops, vec![NodeId::from("x")]);
        assert!(p.is_identity());
        assert_eq!(t.path_bottleneck(&p).unwrap(), UNBOUNDED);
    }

    #[test]
    fn dangling_endpoint() {
        let err = Topology::from_document(&doc(&[("a", Router)], &[("a", "b", 1.0)])).unwrap_err();
        assert_eq!(err, TopologyError::DanglingEndpoint("b".into()));
    }

    #[test]
    fn duplicate_link_either_orientation() {
        let err = Topology::from_document(&doc(
            &[("a", Router), ("b", Router)],
            &[("a", "b", 1.0), ("b", "a", 2.0)],
        ))
        .unwrap_err();
        assert!(matches!(err, TopologyError::DuplicateLink(..)));
    }

    #[test]
    fn non_positive_capacity() {
        let err = Topology::from_document(&doc(&[("a", Router), ("b", Router)], &[("a", "b", 0.0)])).unwrap_err();
        assert!(matches!(err, TopologyError::NonPositiveCapacity { .. }));
    }

    #[test]
    fn site_with_two_links_rejected() {
        let err = Topology::from_document(&doc(
            &[("s", Site), ("a", Router), ("b", Router)],
            &[("s", "a", 1.0), ("s", "b", 1.0)],
        ))
        .unwrap_err();
        assert_eq!(err, TopologyError::SiteNotLeaf("s".into()));
    }

    #[test]
    fn malformed_json() {
        assert!(matches!(
            Topology::from_json_str("{\"nodes\": 3}"),
            Err(TopologyError::MalformedDocument(_))
        ));
    }

    #[test]
    fn diamond_tie_break_prefers_smaller_predecessor() {
        // A-B-D and A-C-D are both two hops; B < C.
        let t = Topology::from_document(&doc(
            &[("A", Router), ("B", Router), ("C", Router), ("D", Router)],
            &[("A", "C", 1.0), ("C", "D", 1.0), ("A", "B", 1.0), ("B", "D", 1.0)],
        ))
        .unwrap();
        let p = t.shortest_path("A", "D").unwrap();
        assert_eq!(p.to_string(), "A B D");
        let back = t.shortest_path("D", "A").unwrap();
        assert_eq!(back.to_string(), "D B A");
    }

    #[test]
    fn bottleneck_is_minimum() {
        let t = Topology::from_document(&doc(
            &[("a", Router), ("b", Router), ("c", Router), ("d", Router)],
            &[("a", "b", 100.0), ("b", "c", 10.0), ("c", "d", 40.0)],
        ))
        .unwrap();
        let p = t.shortest_path("a", "d").unwrap();
        assert_eq!(t.path_bottleneck(&p).unwrap(), gbps(10.0));
    }

    #[test]
    fn no_route_and_unknown_node() {
        let t = Topology::from_document(&doc(&[("a", Router), ("b", Router)], &[])).unwrap();
        assert!(matches!(t.shortest_path("a", "b"), Err(TopologyError::NoRoute(..))));
        assert_eq!(
            t.shortest_path("a", "zz").unwrap_err(),
            TopologyError::UnknownNode("zz".into())
        );
    }

    #[test]
    fn invalid_paths_rejected() {
        let t = Topology::from_document(&doc(
            &[("a", Router), ("b", Router), ("c", Router)],
            &[("a", "b", 1.0), ("b", "c", 1.0)],
        ))
        .unwrap();
        assert!(t.path_from_hops(&["a", "c"]).is_err());
        assert!(t.path_from_hops(&["a", "b", "a"]).is_err());
        let mut p = t.path_from_hops(&["a", "b", "c"]).unwrap();
        p.links.swap(0, 1);
        assert!(matches!(t.path_bottleneck(&p), Err(TopologyError::InvalidPath(_))));
    }

    #[test]
    fn aliases_resolve() {
        let mut d = doc(&[("san-diego", Site), ("r", Router)], &[("san-diego", "r", 10.0)]);
        d.nodes[0].aliases = vec!["ucsd".into()];
        let t = Topology::from_document(&d).unwrap();
        assert_eq!(t.resolve("ucsd").unwrap().as_str(), "san-diego");
        assert_eq!(t.shortest_path("ucsd", "r").unwrap().to_string(), "san-diego r");
        assert_eq!(t.access_capacity("ucsd").unwrap(), Some(gbps(10.0)));
    }
}
