//! Variable sets as bitmasks. Bit `i` stands for variable `i`.

/// A set of variable indices. Supports up to [`MAX_VARS`] variables.
pub type VarSet = u32;

pub const MAX_VARS: usize = 31;

#[inline]
pub fn singleton(v: usize) -> VarSet {
    1 << v
}

#[inline]
pub fn full(n: usize) -> VarSet {
    if n == 0 {
        0
    } else {
        (u32::MAX) >> (32 - n)
    }
}

#[inline]
pub fn contains(set: VarSet, v: usize) -> bool {
    set >> v & 1 == 1
}

#[inline]
pub fn len(set: VarSet) -> usize {
    set.count_ones() as usize
}

/// Iterates the members of `set` in ascending order.
pub fn members(set: VarSet) -> impl Iterator<Item = usize> {
    let mut rest = set;
    std::iter::from_fn(move || {
        if rest == 0 {
            None
        } else {
            let v = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            Some(v)
        }
    })
}

/// Drops bit `skip` from `set`, shifting the higher bits down by one.
///
/// This maps subsets of `V \ {skip}` onto `0..2^(n-1)`.
#[inline]
pub fn compress(set: VarSet, skip: usize) -> usize {
    let low = set & ((1u32 << skip) - 1);
    let high = (set >> (skip + 1)) << skip;
    (low | high) as usize
}

/// Inverse of [`compress`].
#[inline]
pub fn expand(index: usize, skip: usize) -> VarSet {
    let index = index as u32;
    let low = index & ((1u32 << skip) - 1);
    let high = (index >> skip) << (skip + 1);
    low | high
}

/// All subsets of `universe`, in increasing numeric order.
pub fn subsets(universe: VarSet) -> impl Iterator<Item = VarSet> {
    let mut next = Some(0u32);
    std::iter::from_fn(move || {
        let cur = next?;
        next = if cur == universe {
            None
        } else {
            Some((cur.wrapping_sub(universe)) & universe)
        };
        Some(cur)
    })
}

/// All subsets of `{0..n}` ordered by cardinality, then numerically.
pub fn by_cardinality(n: usize) -> Vec<Vec<VarSet>> {
    let mut layers = vec![Vec::new(); n + 1];
    for set in 0..=full(n) {
        layers[len(set)].push(set);
    }
    layers
}

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}
