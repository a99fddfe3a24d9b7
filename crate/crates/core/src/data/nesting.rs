use super::types::{Alternative, Mode, Zone};

/// One grouping of the inside alternatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NestingDimension {
    pub name: String,
    group_of: Vec<usize>,
    groups: Vec<Vec<usize>>,
    labels: Vec<String>,
}

impl NestingDimension {
    /// Builds a dimension from per-alternative group keys. Groups are numbered
    /// in order of first appearance.
    pub fn from_keys<K: PartialEq + ToString>(name: impl Into<String>, keys: &[K]) -> Self {
        let mut distinct: Vec<&K> = Vec::new();
        let mut group_of = Vec::with_capacity(keys.len());
        for key in keys {
            let g = match distinct.iter().position(|k| *k == key) {
                Some(g) => g,
                None => {
                    distinct.push(key);
                    distinct.len() - 1
                }
            };
            group_of.push(g);
        }
        let mut groups = vec![Vec::new(); distinct.len()];
        for (j, &g) in group_of.iter().enumerate() {
            groups[g].push(j);
        }
        Self {
            name: name.into(),
            group_of,
            groups,
            labels: distinct.iter().map(|k| k.to_string()).collect(),
        }
    }

    pub fn group_of(&self, alternative: usize) -> usize {
        self.group_of[alternative]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.groups[group]
    }

    pub fn label(&self, group: usize) -> &str {
        &self.labels[group]
    }

    pub fn n_alternatives(&self) -> usize {
        self.group_of.len()
    }
}

/// Either an inside alternative or the outside option (always a singleton group).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Outside,
    Inside(usize),
}

/// Groupings of the inside alternatives along several dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NestingStructure {
    dims: Vec<NestingDimension>,
}

impl NestingStructure {
    pub const MODE: usize = 0;
    pub const DESTINATION: usize = 1;

    pub fn new(dims: Vec<NestingDimension>) -> Self {
        if let Some(first) = dims.first() {
            assert!(
                dims.iter().all(|d| d.n_alternatives() == first.n_alternatives()),
                "nesting dimensions disagree on the number of alternatives"
            );
        }
        Self { dims }
    }

    /// Mode dimension first, destination second.
    pub fn by_mode_and_destination(alternatives: &[Alternative], zones: &[Zone]) -> Self {
        let modes: Vec<Mode> = alternatives.iter().map(|a| a.mode).collect();
        let dests: Vec<&str> = alternatives
            .iter()
            .map(|a| zones[a.destination].id.as_str())
            .collect();
        Self::new(vec![
            NestingDimension::from_keys("mode", &modes),
            NestingDimension::from_keys("destination", &dests),
        ])
    }

    pub fn dims(&self) -> &[NestingDimension] {
        &self.dims
    }

    pub fn dim(&self, h: usize) -> &NestingDimension {
        &self.dims[h]
    }

    pub fn n_dims(&self) -> usize {
        self.dims.len()
    }

    pub fn n_alternatives(&self) -> usize {
        self.dims.first().map_or(0, |d| d.n_alternatives())
    }

    pub fn group_size(&self, h: usize, choice: Choice) -> usize {
        match choice {
            Choice::Outside => 1,
            Choice::Inside(j) => {
                let d = &self.dims[h];
                d.members(d.group_of(j)).len()
            }
        }
    }

    /// Same dimensions restricted to `subset` (re-indexed `0..subset.len()`).
    pub fn restrict(&self, subset: &[usize]) -> Self {
        let dims = self
            .dims
            .iter()
            .map(|d| {
                let keys: Vec<&str> = subset.iter().map(|&j| d.label(d.group_of(j))).collect();
                NestingDimension::from_keys(d.name.clone(), &keys)
            })
            .collect();
        Self { dims }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::types::RegionTag;

    fn six_by_three() -> (Vec<Alternative>, Vec<Zone>) {
        let zones = vec![
            Zone::new("crz", RegionTag::Crz),
            Zone::new("um", RegionTag::UpperManhattan),
            Zone::new("bk", RegionTag::NycOther),
        ];
        let mut alts = Vec::new();
        for d in 0..3 {
            for &mode in Mode::ALL {
                alts.push(Alternative {
                    mode,
                    destination: d,
                });
            }
        }
        (alts, zones)
    }

    #[test]
    fn cross_product_group_sizes() {
        let (alts, zones) = six_by_three();
        let n = NestingStructure::by_mode_and_destination(&alts, &zones);
        let mode = n.dim(NestingStructure::MODE);
        let dest = n.dim(NestingStructure::DESTINATION);
        assert_eq!(mode.groups().len(), 6);
        assert!(mode.groups().iter().all(|g| g.len() == 3));
        assert_eq!(dest.groups().len(), 3);
        assert!(dest.groups().iter().all(|g| g.len() == 6));
    }

    #[test]
    fn outside_is_singleton_everywhere() {
        let (alts, zones) = six_by_three();
        let n = NestingStructure::by_mode_and_destination(&alts, &zones);
        for h in 0..n.n_dims() {
            assert_eq!(n.group_size(h, Choice::Outside), 1);
        }
    }

    #[test]
    fn transit_crz_groups() {
        let (alts, zones) = six_by_three();
        let n = NestingStructure::by_mode_and_destination(&alts, &zones);
        let j = alts
            .iter()
            .position(|a| a.mode == Mode::Transit && a.destination == 0)
            .unwrap();
        let mode = n.dim(0);
        let members: Vec<Alternative> = mode.members(mode.group_of(j)).iter().map(|&q| alts[q]).collect();
        assert!(members.iter().all(|a| a.mode == Mode::Transit));
        assert_eq!(members.len(), 3);
        let dest = n.dim(1);
        let members: Vec<Alternative> = dest.members(dest.group_of(j)).iter().map(|&q| alts[q]).collect();
        assert!(members.iter().all(|a| a.destination == 0));
        assert_eq!(members.len(), 6);
        assert_eq!(dest.label(dest.group_of(j)), "crz");
    }

    #[test]
    fn groups_partition_alternatives() {
        let (alts, zones) = six_by_three();
        let n = NestingStructure::by_mode_and_destination(&alts, &zones);
        for d in n.dims() {
            let mut seen: Vec<usize> = d.groups().iter().flatten().copied().collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..alts.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn restrict_reindexes() {
        let (alts, zones) = six_by_three();
        let n = NestingStructure::by_mode_and_destination(&alts, &zones);
        let sub = n.restrict(&[0, 1, 6]);
        assert_eq!(sub.n_alternatives(), 3);
        // 0 and 6 share a mode (Driving) at different destinations.
        assert_eq!(sub.dim(0).group_of(0), sub.dim(0).group_of(2));
        assert_eq!(sub.dim(1).group_of(0), sub.dim(1).group_of(1));
        assert_eq!(sub.dim(1).label(sub.dim(1).group_of(2)), "um");
    }
}
