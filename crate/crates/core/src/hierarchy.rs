//! Series hierarchy, summing matrix, and coherent aggregation.
//!
//! A hierarchy orders its m nodes as: aggregate nodes first (level
//! ascending, id lexicographic within a level), then the n bottom nodes
//! (same order). With that ordering the bottom rows of the summing matrix
//! form an identity block and the aggregate block is its first `m - n` rows.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An immutable series hierarchy (tree).
#[derive(Debug)]
pub struct Hierarchy {
    node_ids: Vec<String>,
    index: HashMap<String, usize>,
    /// (child, parent) pairs by node position.
    parent_edges: Vec<(usize, usize)>,
    level_of: Vec<usize>,
    children: Vec<Vec<usize>>,
    parent_of: Vec<Option<usize>>,
    /// Number of bottom (leaf) nodes; they occupy the last n positions.
    bottom_count: usize,
}

impl Hierarchy {
    /// Total number of series.
    pub fn m(&self) -> usize {
        self.node_ids.len()
    }

    /// Number of bottom-level series.
    pub fn n(&self) -> usize {
        self.bottom_count
    }

    /// Number of aggregate series (`m - n`).
    pub fn a(&self) -> usize {
        self.m() - self.n()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_id(&self, pos: usize) -> &str {
        &self.node_ids[pos]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn level_of(&self, pos: usize) -> usize {
        self.level_of[pos]
    }

    /// Number of levels; the top is level 0.
    pub fn level_count(&self) -> usize {
        self.level_of.iter().copied().max().unwrap_or(0) + 1
    }

    pub fn is_bottom(&self, pos: usize) -> bool {
        pos >= self.a()
    }

    /// Positions of the bottom nodes in summing-matrix column order.
    pub fn bottom_index(&self) -> Vec<usize> {
        (self.a()..self.m()).collect()
    }

    pub fn parent_edges(&self) -> &[(usize, usize)] {
        &self.parent_edges
    }

    pub fn parent_of(&self, pos: usize) -> Option<usize> {
        self.parent_of[pos]
    }

    pub fn children_of(&self, pos: usize) -> &[usize] {
        &self.children[pos]
    }

    /// Node positions of one level, in hierarchy order.
    pub fn nodes_at_level(&self, level: usize) -> Vec<usize> {
        (0..self.m()).filter(|&p| self.level_of[p] == level).collect()
    }
}

/// Build a hierarchy from `(child, parent)` edge pairs.
///
/// Levels are assigned by depth from the single top node; bottom nodes are
/// those with no children. Node ordering is deterministic: aggregates by
/// (level, id), then bottoms by (level, id).
pub fn build_hierarchy(edges: &[(String, String)]) -> Result<Hierarchy> {
    if edges.is_empty() {
        return Err(Error::Hierarchy("empty edge list".into()));
    }

    let mut parent_by_child: BTreeMap<&str, &str> = BTreeMap::new();
    let mut all_ids: BTreeSet<&str> = BTreeSet::new();
    for (child, parent) in edges {
        if child == parent {
            return Err(Error::Hierarchy(format!("cycle detected: self-edge on '{child}'")));
        }
        all_ids.insert(child);
        all_ids.insert(parent);
        if let Some(prev) = parent_by_child.insert(child, parent) {
            if prev != parent {
                return Err(Error::Hierarchy(format!(
                    "node '{child}' has multiple parents ('{prev}', '{parent}'); \
                     only tree hierarchies are supported"
                )));
            }
        }
    }

    let roots: Vec<&str> = all_ids
        .iter()
        .copied()
        .filter(|id| !parent_by_child.contains_key(id))
        .collect();
    if roots.is_empty() {
        return Err(Error::Hierarchy("cycle detected: no top node".into()));
    }
    if roots.len() > 1 {
        return Err(Error::Hierarchy(format!(
            "multiple connected components (top candidates: {})",
            roots.join(", ")
        )));
    }
    let root = roots[0];

    let mut children_by_id: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (child, parent) in &parent_by_child {
        children_by_id.entry(parent).or_default().push(child);
    }

    // Depth from the top; unreachable nodes imply a cycle off the main tree.
    let mut depth: HashMap<&str, usize> = HashMap::new();
    let mut queue = std::collections::VecDeque::from([root]);
    depth.insert(root, 0);
    while let Some(node) = queue.pop_front() {
        let d = depth[node];
        for child in children_by_id.get(node).map(|v| v.as_slice()).unwrap_or(&[]) {
            depth.insert(child, d + 1);
            queue.push_back(child);
        }
    }
    if depth.len() != all_ids.len() {
        let missing: Vec<&str> = all_ids
            .iter()
            .copied()
            .filter(|id| !depth.contains_key(id))
            .collect();
        return Err(Error::Hierarchy(format!(
            "cycle detected among: {}",
            missing.join(", ")
        )));
    }

    let is_leaf = |id: &str| !children_by_id.contains_key(id);
    let mut aggregates: Vec<&str> = all_ids.iter().copied().filter(|id| !is_leaf(id)).collect();
    let mut bottoms: Vec<&str> = all_ids.iter().copied().filter(|id| is_leaf(id)).collect();
    aggregates.sort_by_key(|id| (depth[id], id.to_string()));
    bottoms.sort_by_key(|id| (depth[id], id.to_string()));

    let node_ids: Vec<String> = aggregates
        .iter()
        .chain(bottoms.iter())
        .map(|s| s.to_string())
        .collect();
    let index: HashMap<String, usize> = node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect();

    let m = node_ids.len();
    let mut level_of = vec![0usize; m];
    let mut parent_of = vec![None; m];
    let mut children = vec![Vec::new(); m];
    let mut parent_edges = Vec::new();
    for (pos, id) in node_ids.iter().enumerate() {
        level_of[pos] = depth[id.as_str()];
        if let Some(parent) = parent_by_child.get(id.as_str()) {
            let ppos = index[*parent];
            parent_of[pos] = Some(ppos);
            children[ppos].push(pos);
            parent_edges.push((pos, ppos));
        }
    }

    Ok(Hierarchy {
        node_ids,
        index,
        parent_edges,
        level_of,
        children,
        parent_of,
        bottom_count: bottoms.len(),
    })
}

/// Read `(child, parent)` edges from a comma-separated file with header
/// `child,parent`. Lines starting with `#` are ignored; CRLF is tolerated.
pub fn read_hierarchy_edges(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    parse_hierarchy_edges(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn parse_hierarchy_edges(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut edges = Vec::new();
    let mut saw_header = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            let header: Vec<&str> = line.split(',').map(str::trim).collect();
            if header != ["child", "parent"] {
                return Err(format!("line {}: expected header 'child,parent'", lineno + 1));
            }
            saw_header = true;
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 2 || parts[0].is_empty() || parts[1].is_empty() {
            return Err(format!("line {}: expected 'child,parent', got '{line}'", lineno + 1));
        }
        edges.push((parts[0].to_string(), parts[1].to_string()));
    }
    if !saw_header {
        return Err("missing 'child,parent' header".into());
    }
    Ok(edges)
}

/// Load and build a hierarchy from a `child,parent` file.
pub fn load_hierarchy(path: &Path) -> Result<Hierarchy> {
    build_hierarchy(&read_hierarchy_edges(path)?)
}

/// Write a hierarchy back to the `child,parent` text format.
pub fn hierarchy_to_csv(h: &Hierarchy) -> String {
    let mut out = String::from("child,parent\n");
    for &(child, parent) in h.parent_edges() {
        out.push_str(&format!("{},{}\n", h.node_id(child), h.node_id(parent)));
    }
    out
}

/// The m-by-n {0,1} matrix mapping bottom series to all series.
#[derive(Debug, Clone)]
pub struct SummingMatrix {
    matrix: Tensor,
    hierarchy: Arc<Hierarchy>,
}

impl SummingMatrix {
    pub fn m(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn n(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.matrix.at2(row, col)
    }

    /// The matrix as a (constant) tensor, usable inside a taped computation.
    pub fn tensor(&self) -> &Tensor {
        &self.matrix
    }

    pub fn hierarchy(&self) -> &Arc<Hierarchy> {
        &self.hierarchy
    }
}

/// Build the summing matrix of a hierarchy: `S[i][j] = 1` iff bottom node j
/// is node i or one of its descendants.
pub fn summing_matrix(hierarchy: &Arc<Hierarchy>) -> SummingMatrix {
    let (m, n) = (hierarchy.m(), hierarchy.n());
    let a = hierarchy.a();
    let mut data = vec![0.0; m * n];
    for j in 0..n {
        let mut node = a + j;
        data[node * n + j] = 1.0;
        while let Some(parent) = hierarchy.parent_of(node) {
            data[parent * n + j] = 1.0;
            node = parent;
        }
    }
    SummingMatrix {
        matrix: Tensor::from_vec(&[m, n], data),
        hierarchy: Arc::clone(hierarchy),
    }
}

/// Bottom-level forecasts plus their coherent aggregates.
#[derive(Debug, Clone)]
pub struct ForecastSet {
    bottom: Tensor,
    full: Tensor,
    hierarchy: Arc<Hierarchy>,
}

impl ForecastSet {
    /// Bottom block, shape `[n, H]`.
    pub fn bottom(&self) -> &Tensor {
        &self.bottom
    }

    /// All series, shape `[m, H]`; equals `S * bottom` by construction.
    pub fn full(&self) -> &Tensor {
        &self.full
    }

    pub fn horizon(&self) -> usize {
        self.bottom.shape()[1]
    }

    pub fn hierarchy(&self) -> &Arc<Hierarchy> {
        &self.hierarchy
    }
}

/// Aggregate bottom forecasts through the summing matrix. The product is a
/// taped operation, so a loss on the aggregates backpropagates into the
/// bottom forecasts.
pub fn aggregate(s: &SummingMatrix, bottom: &Tensor) -> Result<ForecastSet> {
    if bottom.ndim() != 2 || bottom.shape()[0] != s.n() {
        return Err(Error::ShapeMismatch {
            op: "aggregate",
            expected: format!("[{}, H] bottom block", s.n()),
            actual: format!("{:?}", bottom.shape()),
        });
    }
    let full = s.tensor().matmul(bottom);
    Ok(ForecastSet {
        bottom: bottom.clone(),
        full,
        hierarchy: Arc::clone(&s.hierarchy),
    })
}

/// Check that a full forecast matrix is coherent: its aggregate rows equal
/// the summed bottom block within `tol`. Returns the verdict and the largest
/// violation found.
pub fn check_coherence(full: &Tensor, s: &SummingMatrix, tol: f64) -> Result<(bool, f64)> {
    if full.ndim() != 2 || full.shape()[0] != s.m() {
        return Err(Error::ShapeMismatch {
            op: "check_coherence",
            expected: format!("[{}, H]", s.m()),
            actual: format!("{:?}", full.shape()),
        });
    }
    let h = full.shape()[1];
    let bottom = full.slice(0, s.m() - s.n(), s.n());
    let recon = s.tensor().matmul(&bottom);
    let mut max_violation = 0.0f64;
    for i in 0..s.m() * h {
        max_violation = max_violation.max((full.at(i) - recon.at(i)).abs());
    }
    Ok((max_violation <= tol, max_violation))
}

/// Bottom-up reconciliation: keep the bottom block of the base forecasts and
/// rebuild every aggregate from it.
pub fn reconcile_bottom_up(s: &SummingMatrix, base: &Tensor) -> Result<ForecastSet> {
    if base.ndim() != 2 || base.shape()[0] != s.m() {
        return Err(Error::ShapeMismatch {
            op: "reconcile_bottom_up",
            expected: format!("[{}, H] base forecasts in hierarchy order", s.m()),
            actual: format!("{:?}", base.shape()),
        });
    }
    let bottom = base.slice(0, s.m() - s.n(), s.n());
    aggregate(s, &bottom)
}

/// Top-down reconciliation: split the top-level forecast over the bottom
/// series by fixed proportions, then aggregate.
pub fn reconcile_top_down(
    s: &SummingMatrix,
    base_top: &Tensor,
    proportions: &[f64],
) -> Result<ForecastSet> {
    if base_top.ndim() != 2 || base_top.shape()[0] != 1 {
        return Err(Error::ShapeMismatch {
            op: "reconcile_top_down",
            expected: "[1, H] top-level forecast".into(),
            actual: format!("{:?}", base_top.shape()),
        });
    }
    if proportions.len() != s.n() {
        return Err(Error::ShapeMismatch {
            op: "reconcile_top_down",
            expected: format!("{} proportions", s.n()),
            actual: format!("{}", proportions.len()),
        });
    }
    if let Some(p) = proportions.iter().find(|p| **p < 0.0) {
        return Err(Error::Config(format!("negative proportion {p}")));
    }
    let total: f64 = proportions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("proportions sum to {total}, expected 1")));
    }
    let h = base_top.shape()[1];
    let mut data = vec![0.0; s.n() * h];
    for (j, p) in proportions.iter().enumerate() {
        for t in 0..h {
            data[j * h + t] = p * base_top.at(t);
        }
    }
    aggregate(s, &Tensor::from_vec(&[s.n(), h], data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn edges(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter()
            .map(|(c, p)| (c.to_string(), p.to_string()))
            .collect()
    }

    fn two_leaf() -> Arc<Hierarchy> {
        Arc::new(build_hierarchy(&edges(&[("B1", "T"), ("B2", "T")])).unwrap())
    }

    /// B1,B2 -> R1; B3,B4 -> R2; R1,R2 -> T
    fn seven_node() -> Arc<Hierarchy> {
        Arc::new(
            build_hierarchy(&edges(&[
                ("B1", "R1"),
                ("B2", "R1"),
                ("B3", "R2"),
                ("B4", "R2"),
                ("R1", "T"),
                ("R2", "T"),
            ]))
            .unwrap(),
        )
    }

    #[test]
    fn smallest_hierarchy() {
        let h = two_leaf();
        assert_eq!(h.m(), 3);
        assert_eq!(h.n(), 2);
        assert_eq!(h.node_ids(), &["T", "B1", "B2"]);
        assert_eq!(h.level_of(h.position("T").unwrap()), 0);
        assert_eq!(h.level_of(h.position("B1").unwrap()), 1);
        assert_eq!(h.level_of(h.position("B2").unwrap()), 1);
    }

    #[test]
    fn seven_node_tree_levels() {
        let h = seven_node();
        assert_eq!(h.m(), 7);
        assert_eq!(h.n(), 4);
        assert_eq!(h.level_count(), 3);
        assert_eq!(h.node_ids(), &["T", "R1", "R2", "B1", "B2", "B3", "B4"]);
    }

    #[test]
    fn cycle_is_rejected() {
        let err = build_hierarchy(&edges(&[("A", "B"), ("B", "A")])).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(build_hierarchy(&[]).is_err());
    }

    #[test]
    fn disconnected_components_are_rejected() {
        let err = build_hierarchy(&edges(&[("B1", "T"), ("X", "Y")])).unwrap_err();
        assert!(err.to_string().contains("multiple connected components"), "{err}");
    }

    #[test]
    fn multi_parent_is_rejected() {
        let err =
            build_hierarchy(&edges(&[("B1", "T"), ("B1", "R"), ("R", "T")])).unwrap_err();
        assert!(err.to_string().contains("multiple parents"), "{err}");
    }

    #[test]
    fn summing_matrix_two_leaf() {
        let s = summing_matrix(&two_leaf());
        assert_eq!(s.tensor().data(), &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn summing_matrix_single_bottom() {
        let h = Arc::new(build_hierarchy(&edges(&[("B", "T")])).unwrap());
        let s = summing_matrix(&h);
        assert_eq!(s.m(), 2);
        assert_eq!(s.n(), 1);
        assert_eq!(s.tensor().data(), &[1.0, 1.0]);
    }

    #[test]
    fn summing_matrix_seven_node_matches_reachability() {
        let h = seven_node();
        let s = summing_matrix(&h);
        let row = |id: &str| {
            let pos = h.position(id).unwrap();
            (0..s.n()).map(|j| s.entry(pos, j)).collect::<Vec<_>>()
        };
        assert_eq!(row("T"), vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(row("R1"), vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(row("R2"), vec![0.0, 0.0, 1.0, 1.0]);

        // reachability oracle: walk edges child -> parent
        for j in 0..s.n() {
            let leaf = h.a() + j;
            for i in 0..s.m() {
                let mut reachable = false;
                let mut node = leaf;
                loop {
                    if node == i {
                        reachable = true;
                        break;
                    }
                    match h.parent_of(node) {
                        Some(p) => node = p,
                        None => break,
                    }
                }
                assert_eq!(s.entry(i, j) == 1.0, reachable, "S[{i}][{j}]");
            }
        }
    }

    #[test]
    fn aggregate_small_sum() {
        let s = summing_matrix(&two_leaf());
        let bottom = Tensor::from_vec(&[2, 1], vec![2.0, 3.0]);
        let fs = aggregate(&s, &bottom).unwrap();
        assert_eq!(fs.full().data(), &[5.0, 2.0, 3.0]);
    }

    #[test]
    fn aggregate_zeros() {
        let s = summing_matrix(&two_leaf());
        let fs = aggregate(&s, &Tensor::zeros(&[2, 3])).unwrap();
        assert!(fs.full().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn aggregate_seven_node_hand_sums() {
        let s = summing_matrix(&seven_node());
        let bottom = Tensor::from_vec(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let fs = aggregate(&s, &bottom).unwrap();
        let h = fs.hierarchy().clone();
        assert_eq!(fs.full().at(h.position("T").unwrap()), 10.0);
        assert_eq!(fs.full().at(h.position("R2").unwrap()), 7.0);
    }

    #[test]
    fn aggregate_rejects_row_mismatch() {
        let s = summing_matrix(&two_leaf());
        assert!(aggregate(&s, &Tensor::zeros(&[3, 1])).is_err());
    }

    #[test]
    fn coherence_detects_perturbation() {
        let s = summing_matrix(&two_leaf());
        let fs = aggregate(&s, &Tensor::from_vec(&[2, 1], vec![2.0, 3.0])).unwrap();
        let (ok, violation) = check_coherence(fs.full(), &s, 1e-12).unwrap();
        assert!(ok);
        assert!(violation <= 1e-12);

        let perturbed = fs.full().with_value_at(0, fs.full().at(0) + 0.1);
        let (ok, violation) = check_coherence(&perturbed, &s, 1e-6).unwrap();
        assert!(!ok);
        assert!((violation - 0.1).abs() < 1e-12);

        let (ok, _) = check_coherence(&perturbed, &s, 1.0).unwrap();
        assert!(ok);
    }

    #[test]
    fn bottom_up_discards_wrong_aggregates() {
        let s = summing_matrix(&two_leaf());
        let base = Tensor::from_vec(&[3, 1], vec![9.0, 2.0, 3.0]);
        let fs = reconcile_bottom_up(&s, &base).unwrap();
        assert_eq!(fs.full().data(), &[5.0, 2.0, 3.0]);
    }

    #[test]
    fn bottom_up_is_idempotent() {
        let s = summing_matrix(&seven_node());
        let base = Tensor::from_vec(&[7, 2], (0..14).map(|v| v as f64 * 0.7).collect());
        let once = reconcile_bottom_up(&s, &base).unwrap();
        let twice = reconcile_bottom_up(&s, once.full()).unwrap();
        assert_eq!(once.full().data(), twice.full().data());
    }

    #[test]
    fn top_down_splits_by_proportion() {
        let s = summing_matrix(&two_leaf());
        let top = Tensor::from_vec(&[1, 1], vec![10.0]);
        let fs = reconcile_top_down(&s, &top, &[0.5, 0.5]).unwrap();
        assert_eq!(fs.bottom().data(), &[5.0, 5.0]);
        assert_eq!(fs.full().at(0), 10.0);

        let fs = reconcile_top_down(&s, &top, &[1.0, 0.0]).unwrap();
        assert_eq!(fs.bottom().data(), &[10.0, 0.0]);

        let top9 = Tensor::from_vec(&[1, 1], vec![9.0]);
        let fs = reconcile_top_down(&s, &top9, &[1.0 / 3.0, 2.0 / 3.0]).unwrap();
        assert!((fs.bottom().at(0) - 3.0).abs() < 1e-12);
        assert!((fs.bottom().at(1) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn top_down_validates_proportions() {
        let s = summing_matrix(&two_leaf());
        let top = Tensor::from_vec(&[1, 1], vec![10.0]);
        assert!(reconcile_top_down(&s, &top, &[0.7, 0.7]).is_err());
        assert!(reconcile_top_down(&s, &top, &[1.5, -0.5]).is_err());
    }

    #[test]
    fn hierarchy_file_round_trip() {
        let h = seven_node();
        let text = hierarchy_to_csv(&h);
        let parsed = parse_hierarchy_edges(&text).unwrap();
        let rebuilt = build_hierarchy(&parsed).unwrap();
        assert_eq!(rebuilt.node_ids(), h.node_ids());
    }

    #[test]
    fn hierarchy_file_tolerates_comments_and_crlf() {
        let text = "# a comment\r\nchild,parent\r\nB1,T\r\n\r\n# another\r\nB2,T\r\n";
        let parsed = parse_hierarchy_edges(text).unwrap();
        assert_eq!(parsed.len(), 2);
        let h = build_hierarchy(&parsed).unwrap();
        assert_eq!(h.m(), 3);
    }

    /// Seeded random tree: every node except the root picks a parent among
    /// nodes whose depth is below the cap.
    fn random_tree(rng: &mut ChaCha8Rng, max_nodes: usize, max_depth: usize) -> Arc<Hierarchy> {
        let total = rng.gen_range(2..=max_nodes);
        let mut depth = vec![0usize];
        let mut edge_list = Vec::new();
        for i in 1..total {
            let candidates: Vec<usize> =
                (0..i).filter(|&p| depth[p] + 1 < max_depth).collect();
            let parent = candidates[rng.gen_range(0..candidates.len())];
            depth.push(depth[parent] + 1);
            edge_list.push((format!("N{i:03}"), format!("N{parent:03}")));
        }
        Arc::new(build_hierarchy(&edge_list).unwrap())
    }

    #[test]
    fn random_trees_identity_block_and_coherence() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let h = random_tree(&mut rng, 64, 5);
            let s = summing_matrix(&h);
            let (a, n) = (h.a(), h.n());

            // bottom rows of S form the identity block
            for i in 0..n {
                for j in 0..n {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_eq!(s.entry(a + i, j), expect);
                }
            }

            // every column sums to the ancestor-chain depth (>= 2)
            for j in 0..n {
                let col_sum: f64 = (0..h.m()).map(|i| s.entry(i, j)).sum();
                assert!(col_sum >= 2.0);
                assert_eq!(col_sum, h.level_of(a + j) as f64 + 1.0);
            }

            let horizon = rng.gen_range(1..=4);
            let bottom = Tensor::from_vec(
                &[n, horizon],
                (0..n * horizon).map(|_| rng.gen_range(-100.0..100.0)).collect(),
            );
            let fs = aggregate(&s, &bottom).unwrap();
            let tol = 1e-9 * (1.0 + fs.full().max_abs());
            let (ok, violation) = check_coherence(fs.full(), &s, tol).unwrap();
            assert!(ok, "coherence violation {violation} over tol {tol}");
        }
    }

    #[test]
    fn aggregate_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = seven_node();
        let s = summing_matrix(&h);
        let x = Tensor::from_vec(&[4, 3], (0..12).map(|_| rng.gen_range(-5.0..5.0)).collect());
        let y = Tensor::from_vec(&[4, 3], (0..12).map(|_| rng.gen_range(-5.0..5.0)).collect());
        let (ca, cb) = (2.5, -1.25);

        let lhs = aggregate(&s, &x.scale(ca).add(&y.scale(cb))).unwrap();
        let ax = aggregate(&s, &x).unwrap();
        let ay = aggregate(&s, &y).unwrap();
        for i in 0..lhs.full().len() {
            let expect = ca * ax.full().at(i) + cb * ay.full().at(i);
            assert!((lhs.full().at(i) - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn aggregate_participates_in_the_tape() {
        let s = summing_matrix(&two_leaf());
        let bottom = Tensor::param(&[2, 1], vec![2.0, 3.0]);
        let fs = aggregate(&s, &bottom).unwrap();
        let loss = fs.full().sum();
        let grads = crate::tensor::backward(&loss).unwrap();
        // each bottom value feeds itself and the top: gradient 2
        assert_eq!(grads.get(&bottom).unwrap().data(), &[2.0, 2.0]);
    }
}
