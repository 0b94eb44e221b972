use super::split::Direction;

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        default_direction: Direction,
        left: usize,
        right: usize,
        gain: f64,
        /// Training hessian mass reaching this node.
        cover: f64,
    },
    Leaf {
        weight: f64,
        cover: f64,
    },
}

impl TreeNode {
    pub fn cover(&self) -> f64 {
        match *self {
            TreeNode::Split { cover, .. } | TreeNode::Leaf { cover, .. } => cover,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }
}

/// Nodes in preorder; index 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    /// Cover-weighted mean leaf weight under each node.
    means: Vec<f64>,
}

impl Tree {
    /// Renumbers `nodes` (rooted at `root`, any layout) into preorder.
    pub fn from_nodes(nodes: Vec<TreeNode>, root: usize) -> Self {
        let mut out = Vec::with_capacity(nodes.len());
        fn visit(src: &[TreeNode], at: usize, out: &mut Vec<TreeNode>) -> usize {
            let id = out.len();
            out.push(src[at].clone());
            if let TreeNode::Split { left, right, .. } = src[at] {
                let l = visit(src, left, out);
                let r = visit(src, right, out);
                if let TreeNode::Split {
                    left: ref mut nl,
                    right: ref mut nr,
                    ..
                } = out[id]
                {
                    *nl = l;
                    *nr = r;
                }
            }
            id
        }
        visit(&nodes, root, &mut out);
        Tree::preordered(out)
    }

    /// Wraps nodes that are already in preorder.
    pub(crate) fn preordered(nodes: Vec<TreeNode>) -> Self {
        let means = node_means(&nodes);
        Tree { nodes, means }
    }

    pub fn leaf(weight: f64) -> Self {
        Tree::preordered(vec![TreeNode::Leaf { weight, cover: 1.0 }])
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node_mean(&self, idx: usize) -> f64 {
        self.means[idx]
    }

    /// Child index taken by `x` at split node `idx`.
    #[inline]
    pub fn step(&self, idx: usize, x: &[f64]) -> Option<usize> {
        match self.nodes[idx] {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature,
                threshold,
                default_direction,
                left,
                right,
                ..
            } => {
                let v = x[feature];
                let go_left = if v.is_nan() {
                    default_direction == Direction::Left
                } else {
                    v < threshold
                };
                Some(if go_left { left } else { right })
            }
        }
    }

    /// Index of the leaf `x` lands in.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut at = 0;
        while let Some(next) = self.step(at, x) {
            at = next;
        }
        at
    }

    /// Unshrunk leaf weight for `x`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            TreeNode::Leaf { weight, .. } => weight,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn d(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + d(nodes, left).max(d(nodes, right)),
            }
        }
        d(&self.nodes, 0)
    }
}

fn node_means(nodes: &[TreeNode]) -> Vec<f64> {
    let mut means = vec![0.0; nodes.len()];
    // In preorder every child has a larger index than its parent.
    for i in (0..nodes.len()).rev() {
        means[i] = match nodes[i] {
            TreeNode::Leaf { weight, .. } => weight,
            TreeNode::Split { left, right, .. } => {
                let (cl, cr) = (nodes[left].cover(), nodes[right].cover());
                if cl + cr > 0.0 {
                    (cl * means[left] + cr * means[right]) / (cl + cr)
                } else {
                    0.5 * (means[left] + means[right])
                }
            }
        };
    }
    means
}
