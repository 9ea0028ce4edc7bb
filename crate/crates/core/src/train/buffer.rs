use rand::Rng;

/// Fixed-capacity uniform sample of a stream (reservoir sampling).
///
/// After `n` insertions each inserted item is present with probability
/// `min(1, capacity / n)`.
#[derive(Clone, Debug)]
pub struct PopulationBuffer<T> {
    capacity: usize,
    items: Vec<(usize, T)>,
    n_seen: usize,
}

impl<T> PopulationBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            n_seen: 0,
        }
    }

    /// Offer `item` as the next element of the stream. Returns the slot it
    /// went into, if kept.
    pub fn insert<R: Rng + ?Sized>(&mut self, item: T, rng: &mut R) -> Option<usize> {
        let index = self.n_seen;
        self.n_seen += 1;
        if self.items.len() < self.capacity {
            self.items.push((index, item));
            return Some(self.items.len() - 1);
        }
        let j = rng.random_range(0..self.n_seen);
        if j < self.capacity {
            self.items[j] = (index, item);
            Some(j)
        } else {
            None
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_seen(&self) -> usize {
        self.n_seen
    }

    pub fn items(&self) -> impl Iterator<Item = &T> {
        self.items.iter().map(|(_, t)| t)
    }

    pub fn get(&self, slot: usize) -> Option<&T> {
        self.items.get(slot).map(|(_, t)| t)
    }

    /// Stream positions (0-based) of the retained items, by slot.
    pub fn insertion_indices(&self) -> Vec<usize> {
        self.items.iter().map(|(i, _)| *i).collect()
    }
}
