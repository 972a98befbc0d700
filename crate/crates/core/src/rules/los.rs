use crate::env::EnvState;
use crate::geom::Coord;

/// Cells whose interior the segment a→b passes through, in walk order.
///
/// Corner and edge crossings step diagonally, so the cell set is the same in both directions.
pub fn segment_cells(a: Coord, b: Coord) -> Vec<Coord> {
    let d = [(b.x - a.x) as i64, (b.y - a.y) as i64, (b.z - a.z) as i64];
    let n = d.map(|v| v.abs());
    let step = d.map(|v| v.signum() as i32);
    let mut k = [0i64; 3];
    let mut cur = a;
    let mut out = vec![a];
    loop {
        // next boundary crossing on axis i happens at t = (2k_i + 1) / (2 n_i)
        let mut best: Option<usize> = None;
        for i in 0..3 {
            if k[i] >= n[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(j) if (2 * k[i] + 1) * n[j] < (2 * k[j] + 1) * n[i] => Some(i),
                keep => keep,
            };
        }
        let Some(j) = best else { break };
        let tie: Vec<usize> = (0..3)
            .filter(|&i| k[i] < n[i] && (2 * k[i] + 1) * n[j] == (2 * k[j] + 1) * n[i])
            .collect();
        for i in tie {
            k[i] += 1;
            match i {
                0 => cur.x += step[0],
                1 => cur.y += step[1],
                _ => cur.z += step[2],
            }
        }
        out.push(cur);
    }
    out
}

/// First obstacle whose footprint the segment a→b enters, if any.
pub fn line_of_sight(state: &EnvState, a: Coord, b: Coord) -> Option<usize> {
    if a == b {
        return None;
    }
    segment_cells(a, b).into_iter().find_map(|c| state.obstacle_at(c))
}
