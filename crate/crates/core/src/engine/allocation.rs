use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ModelKind {
    Machine,
    Sexs,
    Tgov1,
    Stab1,
    Aux,
}

/// One device's slice of the global state vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slot {
    pub device: String,
    pub kind: ModelKind,
    pub offset: usize,
    pub len: usize,
    pub state_names: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AllocationMap {
    slots: Vec<Slot>,
    total: usize,
}

impl AllocationMap {
    /// Appends a slot and returns its offset.
    pub fn push(&mut self, device: String, kind: ModelKind, names: &[&str]) -> usize {
        let offset = self.total;
        self.slots.push(Slot {
            device,
            kind,
            offset,
            len: names.len(),
            state_names: names.iter().map(|s| (*s).to_owned()).collect(),
        });
        self.total += names.len();
        offset
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slot(&self, device: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.device == device)
    }

    /// Fully qualified state labels, `<device>.<state>`, in vector order.
    pub fn state_labels(&self) -> Vec<String> {
        self.slots
            .iter()
            .flat_map(|s| s.state_names.iter().map(move |n| format!("{}.{n}", s.device)))
            .collect()
    }

    /// Index of a fully qualified state label.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        let (device, state) = label.rsplit_once('.')?;
        let slot = self.slot(device)?;
        slot.state_names
            .iter()
            .position(|n| n == state)
            .map(|k| slot.offset + k)
    }

    pub fn label_of(&self, index: usize) -> Option<String> {
        self.slots
            .iter()
            .find(|s| index >= s.offset && index < s.offset + s.len)
            .map(|s| format!("{}.{}", s.device, s.state_names[index - s.offset]))
    }

    pub fn count(&self, kind: &ModelKind) -> usize {
        self.slots.iter().filter(|s| &s.kind == kind).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub values: Vec<f64>,
    /// Simulation time, s.
    pub t: f64,
}

impl StateVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, t: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slots_are_contiguous() {
        let mut a = AllocationMap::default();
        assert_eq!(a.push("G1".into(), ModelKind::Machine, &["a", "b"]), 0);
        assert_eq!(a.push("G1.avr".into(), ModelKind::Sexs, &["c"]), 2);
        assert_eq!(a.total(), 3);
        assert_eq!(a.state_labels(), vec!["G1.a", "G1.b", "G1.avr.c"]);
        assert_eq!(a.index_of("G1.avr.c"), Some(2));
        assert_eq!(a.index_of("G1.b"), Some(1));
        assert_eq!(a.index_of("G2.b"), None);
        assert_eq!(a.label_of(2).as_deref(), Some("G1.avr.c"));
    }
}
