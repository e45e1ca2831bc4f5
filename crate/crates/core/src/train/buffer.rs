use nalgebra::DMatrix;
use rand::{Rng, RngCore};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    pub x_next: Vec<f64>,
    pub g_next: f64,
}

/// Column-stacked minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub x_next: DMatrix<f64>,
    pub g_next: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.g_next.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g_next.is_empty()
    }

    pub fn from_transitions(items: &[&Transition]) -> Self {
        let b = items.len();
        let (n, m, k) = (items[0].x.len(), items[0].u.len(), items[0].d.len());
        Self {
            x: DMatrix::from_fn(n, b, |i, j| items[j].x[i]),
            u: DMatrix::from_fn(m, b, |i, j| items[j].u[i]),
            d: DMatrix::from_fn(k, b, |i, j| items[j].d[i]),
            x_next: DMatrix::from_fn(n, b, |i, j| items[j].x_next[i]),
            g_next: items.iter().map(|t| t.g_next).collect(),
        }
    }
}

/// Fixed-capacity FIFO ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            next: 0,
            pushed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total transitions ever pushed.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.pushed += 1;
    }

    /// Oldest-first view.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    pub fn sample(&self, batch: usize, rng: &mut dyn RngCore) -> Batch {
        assert!(!self.items.is_empty(), "sampling from an empty buffer");
        let picks: Vec<&Transition> = (0..batch)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect();
        Batch::from_transitions(&picks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn t(i: usize) -> Transition {
        Transition {
            x: vec![i as f64],
            u: vec![0.0],
            d: vec![0.0],
            x_next: vec![i as f64 + 1.0],
            g_next: i as f64,
        }
    }

    #[test]
    fn eviction_is_fifo() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(t(i));
        }
        let order: Vec<f64> = b.iter_oldest_first().map(|t| t.g_next).collect();
        assert_eq!(order, vec![2.0, 3.0, 4.0]);
        assert_eq!(b.len(), 3);
        assert_eq!(b.pushed(), 5);
    }

    #[test]
    fn samples_only_filled_slots() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..7 {
            b.push(t(i));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let batch = b.sample(500, &mut rng);
        assert!(batch.g_next.iter().all(|&g| (0.0..7.0).contains(&g)));
        assert_eq!(batch.x.ncols(), 500);
    }
}
