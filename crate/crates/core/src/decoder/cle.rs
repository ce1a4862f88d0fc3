//! Chu-Liu-Edmonds maximum spanning arborescence by recursive contraction.

const NONE: f64 = f64::NEG_INFINITY;

/// `w[h][d]` is the weight of arc h → d over nodes `0..m` with root 0;
/// `NEG_INFINITY` marks a missing arc. Returns `heads` with `heads[0] = 0`.
/// Requires that some arborescence with finite weight exists.
pub(crate) fn max_arborescence(w: &[Vec<f64>]) -> Vec<usize> {
    let m = w.len();
    let mut best = vec![0usize; m];
    for d in 1..m {
        let mut b = usize::MAX;
        for h in 0..m {
            if h != d && w[h][d] > NONE && (b == usize::MAX || w[h][d] > w[b][d]) {
                b = h;
            }
        }
        assert!(b != usize::MAX, "node {d} has no incoming arc");
        best[d] = b;
    }

    let Some(cycle) = cycle_in(&best) else {
        return best;
    };

    let mut in_cycle = vec![false; m];
    for &v in &cycle {
        in_cycle[v] = true;
    }
    // Contracted graph: surviving nodes keep their relative order, the cycle
    // becomes the last node.
    let mut new_index = vec![usize::MAX; m];
    let mut old_index = Vec::new();
    for v in 0..m {
        if !in_cycle[v] {
            new_index[v] = old_index.len();
            old_index.push(v);
        }
    }
    let c = old_index.len();
    let mc = c + 1;
    let mut cw = vec![vec![NONE; mc]; mc];
    let mut enter = vec![usize::MAX; m];
    let mut leave = vec![usize::MAX; m];
    for (nu, &u) in old_index.iter().enumerate() {
        for (nv, &v) in old_index.iter().enumerate() {
            cw[nu][nv] = w[u][v];
        }
        let mut best_in = NONE;
        for &v in &cycle {
            if w[u][v] == NONE {
                continue;
            }
            let gain = w[u][v] - w[best[v]][v];
            if enter[u] == usize::MAX || gain > best_in {
                best_in = gain;
                enter[u] = v;
            }
        }
        cw[nu][c] = best_in;
    }
    for (nv, &v) in old_index.iter().enumerate() {
        let mut best_out = NONE;
        for &u in &cycle {
            if w[u][v] == NONE {
                continue;
            }
            if leave[v] == usize::MAX || w[u][v] > best_out {
                best_out = w[u][v];
                leave[v] = u;
            }
        }
        cw[c][nv] = best_out;
    }
    let contracted = max_arborescence(&cw);

    let mut heads = best;
    for (nv, &v) in old_index.iter().enumerate().skip(1) {
        let h = contracted[nv];
        heads[v] = if h == c { leave[v] } else { old_index[h] };
    }
    let entering_from = old_index[contracted[c]];
    heads[enter[entering_from]] = entering_from;
    heads
}

fn cycle_in(best: &[usize]) -> Option<Vec<usize>> {
    crate::tree::find_cycle(&best[1..]).map(|mut cyc| {
        cyc.sort_unstable();
        cyc
    })
}
