use serde::Serialize;

use crate::geometry::Point;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Node<C> {
    pub config: C,
    pub parent: Option<usize>,
    /// Obstacle clearance at insertion time.
    pub clearance: f64,
}

/// Planner tree. Node 0 is the root and every parent precedes its child.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchTree<C> {
    nodes: Vec<Node<C>>,
}

impl<C: Clone> SearchTree<C> {
    pub fn new(root: C, clearance: f64) -> Self {
        Self {
            nodes: vec![Node {
                config: root,
                parent: None,
                clearance,
            }],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &Node<C> {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[Node<C>] {
        &self.nodes
    }

    pub fn push(&mut self, config: C, parent: usize, clearance: f64) -> usize {
        assert!(parent < self.nodes.len(), "parent {parent} out of range");
        self.nodes.push(Node {
            config,
            parent: Some(parent),
            clearance,
        });
        self.nodes.len() - 1
    }

    /// Index minimizing `metric(node, q)`; ties go to the lowest index.
    pub fn nearest<F>(&self, q: &C, mut metric: F) -> usize
    where
        F: FnMut(&C, &C) -> f64,
    {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = metric(&n.config, q);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Configurations from the root down to node `i`.
    pub fn path_to(&self, i: usize) -> Vec<C> {
        let mut path = Vec::new();
        let mut cur = Some(i);
        while let Some(k) = cur {
            path.push(self.nodes[k].config.clone());
            cur = self.nodes[k].parent;
        }
        path.reverse();
        path
    }
}

impl SearchTree<Point> {
    /// Euclidean nearest node and its distance.
    pub fn nearest_point(&self, q: Point) -> (usize, f64) {
        let mut best = 0;
        let mut best_d2 = f64::INFINITY;
        for (i, n) in self.nodes.iter().enumerate() {
            let dx = n.config.x - q.x;
            let dy = n.config.y - q.y;
            let d2 = dx * dx + dy * dy;
            if d2 < best_d2 {
                best = i;
                best_d2 = d2;
            }
        }
        (best, best_d2.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn singleton_and_duplicates() {
        let mut t = SearchTree::new(Point::new(1.0, 1.0), 0.0);
        assert_eq!(t.nearest_point(Point::new(9.0, 9.0)).0, 0);
        t.push(Point::new(3.0, 3.0), 0, 0.0);
        t.push(Point::new(3.0, 3.0), 1, 0.0);
        assert_eq!(t.nearest_point(Point::new(3.0, 3.0)), (1, 0.0));
        assert_eq!(t.nearest(&Point::new(3.0, 3.0), |a, b| a.dist(*b)), 1);
        assert_eq!(t.path_to(2).len(), 3);
    }

    #[test]
    fn nearest_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut t = SearchTree::new(Point::new(rng.gen(), rng.gen()), 0.0);
            for i in 0..99 {
                let p = Point::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0));
                t.push(p, rng.gen_range(0..=i), 0.0);
            }
            for _ in 0..50 {
                let q = Point::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0));
                let oracle = (0..t.len())
                    .min_by(|&a, &b| {
                        let da = t.node(a).config.dist(q);
                        let db = t.node(b).config.dist(q);
                        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                    })
                    .unwrap();
                assert_eq!(t.nearest_point(q).0, oracle);
                assert_eq!(t.nearest(&q, |a, b| a.dist(*b)), oracle);
            }
        }
    }
}
