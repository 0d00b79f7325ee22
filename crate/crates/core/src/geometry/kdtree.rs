//! Static 3-d tree over a borrowed point slice. Queries are exact: results
//! equal a brute-force scan, including with duplicate coordinates.

use super::Point;

const LEAF_SIZE: usize = 12;

#[derive(Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug)]
pub struct KdTree<'a> {
    points: &'a [Point],
    order: Vec<usize>,
    nodes: Vec<Node>,
    /// Bounding box of each node's points.
    boxes: Vec<([f64; 3], [f64; 3])>,
}

#[inline]
fn box_sq_dist(q: &Point, (lo, hi): &([f64; 3], [f64; 3])) -> f64 {
    let mut d = 0.0;
    for a in 0..3 {
        let v = if q[a] < lo[a] {
            lo[a] - q[a]
        } else if q[a] > hi[a] {
            q[a] - hi[a]
        } else {
            0.0
        };
        d += v * v;
    }
    d
}

#[inline]
pub fn sq_dist(a: &Point, b: &Point) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Point]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
            boxes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let p = &self.points[i];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        self.nodes.push(Node::Leaf { start, end });
        self.boxes.push((lo, hi));
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] <= 0.0 {
            return id;
        }
        let mid = (end - start) / 2;
        let points = self.points;
        self.order[start..end]
            .select_nth_unstable_by(mid, |&i, &j| points[i][axis].total_cmp(&points[j][axis]));
        let value = points[self.order[start + mid]][axis];
        let left = self.build(start, start + mid);
        let right = self.build(start + mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Index and squared distance of the nearest point; ties go to the lower index.
    pub fn nearest(&self, q: &Point) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(0, q, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, node: usize, q: &Point, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = sq_dist(&self.points[i], q);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                if box_sq_dist(q, &self.boxes[near]) <= best.1 {
                    self.nearest_rec(near, q, best);
                }
                if box_sq_dist(q, &self.boxes[far]) <= best.1 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points to `q` as (squared distance, index), ascending,
    /// skipping index `skip` when given.
    pub fn knn(&self, q: &Point, k: usize, skip: Option<usize>) -> Vec<(f64, usize)> {
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.points.is_empty() {
            self.knn_rec(0, q, k, skip, &mut heap);
        }
        heap
    }

    fn knn_rec(&self, node: usize, q: &Point, k: usize, skip: Option<usize>, found: &mut Vec<(f64, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == skip {
                        continue;
                    }
                    let d = sq_dist(&self.points[i], q);
                    if found.len() == k {
                        let worst = found[k - 1];
                        if d > worst.0 || (d == worst.0 && i > worst.1) {
                            continue;
                        }
                    }
                    let pos = found.partition_point(|&(fd, fi)| fd < d || (fd == d && fi < i));
                    found.insert(pos, (d, i));
                    found.truncate(k);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                for child in [near, far] {
                    if found.len() < k || box_sq_dist(q, &self.boxes[child]) <= found[k - 1].0 {
                        self.knn_rec(child, q, k, skip, found);
                    }
                }
            }
        }
    }
}
