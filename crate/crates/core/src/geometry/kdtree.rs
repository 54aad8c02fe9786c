//! Static 3-D k-d tree for exact nearest-neighbour queries.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// Owns its points, stored in leaf order.
#[derive(Debug, Clone)]
pub(crate) struct KdTree {
    points: Vec<Vector3<f64>>,
    root: Node,
}

#[inline]
pub(crate) fn squared_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    pub(crate) fn build(points: &[Vector3<f64>]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let n = order.len();
        let root = Self::build_node(points, &mut order, 0, n);
        KdTree {
            points: order.iter().map(|&i| points[i]).collect(),
            root,
        }
    }

    pub(crate) fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    fn build_node(points: &[Vector3<f64>], order: &mut [usize], start: usize, end: usize) -> Node {
        if end - start <= LEAF_SIZE {
            return Node::Leaf { start, end };
        }
        let slice = &mut order[start..end];
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in slice.iter() {
            lo = lo.inf(&points[i]);
            hi = hi.sup(&points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let value = points[slice[mid]][axis];
        let split = start + mid;
        Node::Split {
            axis,
            value,
            left: Box::new(Self::build_node(points, order, start, split)),
            right: Box::new(Self::build_node(points, order, split, end)),
        }
    }

    /// Squared distance from `query` to its nearest point. `INFINITY` for an empty tree.
    pub(crate) fn nearest_squared(&self, query: &Vector3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        self.search(&self.root, query, &mut best);
        best
    }

    fn search(&self, node: &Node, query: &Vector3<f64>, best: &mut f64) {
        match node {
            Node::Leaf { start, end } => {
                for p in &self.points[*start..*end] {
                    let d = squared_distance(query, p);
                    if d < *best {
                        *best = d;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[*axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, best);
                if diff * diff <= *best {
                    self.search(far, query, best);
                }
            }
        }
    }
}
