//! Head-array helpers shared by the loader, the decoders and the metrics.
//!
//! A head array has one entry per word (words are numbered from 1), and
//! `heads[w - 1]` is the head of word `w`, with 0 standing for ROOT.

/// True when the heads form an arborescence rooted at 0: every head is in
/// range, no word heads itself, and following heads from any word reaches 0.
pub fn is_arborescence(heads: &[usize]) -> bool {
    let n = heads.len();
    if heads.iter().enumerate().any(|(i, &h)| h > n || h == i + 1) {
        return false;
    }
    // 0 = unvisited, 1 = on current path, 2 = known to reach the root.
    let mut state = vec![0u8; n + 1];
    state[0] = 2;
    for start in 1..=n {
        let mut path = Vec::new();
        let mut node = start;
        while state[node] == 0 {
            state[node] = 1;
            path.push(node);
            node = heads[node - 1];
        }
        if state[node] == 1 {
            return false;
        }
        for p in path {
            state[p] = 2;
        }
    }
    true
}

/// Finds one cycle among words 1..=n (heads outside the range are treated
/// as ROOT). Returns the cycle's members in head-following order.
pub fn find_cycle(heads: &[usize]) -> Option<Vec<usize>> {
    let n = heads.len();
    let mut state = vec![0u8; n + 1];
    state[0] = 2;
    for start in 1..=n {
        let mut path = Vec::new();
        let mut node = start;
        while node <= n && state[node] == 0 {
            state[node] = 1;
            path.push(node);
            node = heads[node - 1];
        }
        if node <= n && state[node] == 1 {
            let pos = path.iter().position(|&p| p == node).expect("on path");
            return Some(path[pos..].to_vec());
        }
        for p in path {
            state[p] = 2;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recognizes_trees_and_cycles() {
        assert!(is_arborescence(&[2, 0]));
        assert!(is_arborescence(&[0, 0, 2]));
        assert!(is_arborescence(&[]));
        assert!(!is_arborescence(&[2, 1]));
        assert!(!is_arborescence(&[1]));
        assert!(!is_arborescence(&[0, 3, 2]));
        assert!(!is_arborescence(&[5]));
        assert_eq!(find_cycle(&[0, 3, 2]), Some(vec![2, 3]));
        assert_eq!(find_cycle(&[2, 0]), None);
    }
}
