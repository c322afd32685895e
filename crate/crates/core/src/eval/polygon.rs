use super::EvalError;
use crate::geometry::Vec2;
use crate::mapping::FloorPlan;

const EPS: f64 = 1e-12;

/// Signed shoelace area (positive for counter-clockwise).
pub fn signed_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    0.5 * (0..n).map(|i| poly[i].perp(&poly[(i + 1) % n])).sum::<f64>()
}

fn cross(a: &Vec2, b: &Vec2) -> f64 {
    a.perp(b)
}

fn segments_intersect(p1: &Vec2, p2: &Vec2, q1: &Vec2, q2: &Vec2) -> bool {
    let d1 = cross(&(q2 - q1), &(p1 - q1));
    let d2 = cross(&(q2 - q1), &(p2 - q1));
    let d3 = cross(&(p2 - p1), &(q1 - p1));
    let d4 = cross(&(p2 - p1), &(q2 - p1));
    if ((d1 > EPS && d2 < -EPS) || (d1 < -EPS && d2 > EPS)) && ((d3 > EPS && d4 < -EPS) || (d3 < -EPS && d4 > EPS)) {
        return true;
    }
    let on = |a: &Vec2, b: &Vec2, p: &Vec2, d: f64| {
        d.abs() <= EPS && p.x >= a.x.min(b.x) - EPS && p.x <= a.x.max(b.x) + EPS
            && p.y >= a.y.min(b.y) - EPS && p.y <= a.y.max(b.y) + EPS
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

/// Checks that `poly` is a simple polygon with nonzero area.
pub fn validate_polygon(poly: &[Vec2]) -> Result<(), EvalError> {
    let n = poly.len();
    if n < 3 || poly.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(EvalError::InvalidPolygon("fewer than 3 finite vertices".into()));
    }
    if signed_area(poly).abs() <= EPS {
        return Err(EvalError::InvalidPolygon("zero area".into()));
    }
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(&poly[i], &poly[(i + 1) % n], &poly[j], &poly[(j + 1) % n]) {
                return Err(EvalError::InvalidPolygon(format!("edges {i} and {j} intersect")));
            }
        }
    }
    Ok(())
}

fn ccw(poly: &[Vec2]) -> Vec<Vec2> {
    let mut p = poly.to_vec();
    if signed_area(&p) < 0.0 {
        p.reverse();
    }
    p
}

/// Strict interior test by crossing number; boundary points are resolved by the caller.
fn inside(p: &Vec2, poly: &[Vec2]) -> bool {
    crate::sim::point_in_polygon(p, poly)
}

/// Index of an edge of `poly` containing `p`, if any.
fn on_boundary(p: &Vec2, poly: &[Vec2], tol: f64) -> Option<usize> {
    let n = poly.len();
    (0..n).find(|&i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let e = b - a;
        let len2 = e.norm_squared();
        let u = e.dot(&(p - a)) / len2;
        (-1e-9..=1.0 + 1e-9).contains(&u) && cross(&e, &(p - a)).abs() / len2.sqrt() <= tol
    })
}

/// Sum of `x dy - y dx` over the parts of `a`'s boundary lying inside `b`.
///
/// Edges shared with `b` count only if `keep_shared` and both run the same way.
fn boundary_inside(a: &[Vec2], b: &[Vec2], keep_shared: bool, tol: f64) -> f64 {
    let (na, nb) = (a.len(), b.len());
    let mut total = 0.0;
    for i in 0..na {
        let (p, q) = (a[i], a[(i + 1) % na]);
        let d = q - p;
        let mut cuts = vec![0.0, 1.0];
        for j in 0..nb {
            let (r, s) = (b[j], b[(j + 1) % nb]);
            let e = s - r;
            let den = cross(&d, &e);
            if den.abs() > EPS {
                let t = cross(&(r - p), &e) / den;
                let u = cross(&(r - p), &d) / den;
                if (0.0..=1.0).contains(&t) && (-EPS..=1.0 + EPS).contains(&u) {
                    cuts.push(t);
                }
            } else {
                // Parallel: cut at the projections of the other edge's endpoints.
                for w in [r, s] {
                    let t = d.dot(&(w - p)) / d.norm_squared();
                    if (0.0..=1.0).contains(&t) {
                        cuts.push(t);
                    }
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|x, y| (*x - *y).abs() < 1e-15);
        for w in cuts.windows(2) {
            if w[1] - w[0] < 1e-15 {
                continue;
            }
            let (s0, s1) = (p + d * w[0], p + d * w[1]);
            let mid = (s0 + s1) * 0.5;
            let include = match on_boundary(&mid, b, tol) {
                Some(j) => keep_shared && (b[(j + 1) % nb] - b[j]).dot(&d) > 0.0,
                None => inside(&mid, b),
            };
            if include {
                total += cross(&s0, &s1);
            }
        }
    }
    total
}

/// Area of the intersection of two simple polygons.
///
/// Green's theorem over the boundary of the intersection: the parts of each
/// boundary lying inside the other polygon.
pub fn intersection_area(a: &[Vec2], b: &[Vec2]) -> Result<f64, EvalError> {
    validate_polygon(a)?;
    validate_polygon(b)?;
    let (a, b) = (ccw(a), ccw(b));
    let scale = a.iter().chain(&b).map(|p| p.norm()).fold(1.0, f64::max);
    let tol = 1e-10 * scale;
    let twice = boundary_inside(&a, &b, true, tol) + boundary_inside(&b, &a, false, tol);
    Ok((0.5 * twice).max(0.0))
}

/// Layout F-score `2 |P ∩ T| / (|P| + |T|)` of two sets of disjoint polygons.
pub fn fscore(pred: &[Vec<Vec2>], truth: &[Vec<Vec2>]) -> Result<f64, EvalError> {
    let area = |set: &[Vec<Vec2>]| -> Result<f64, EvalError> {
        set.iter().map(|p| validate_polygon(p).map(|_| signed_area(p).abs())).sum()
    };
    let (ap, at) = (area(pred)?, area(truth)?);
    if ap + at <= 0.0 {
        return Err(EvalError::InvalidPolygon("both polygon sets are empty".into()));
    }
    let mut inter = 0.0;
    for p in pred {
        for t in truth {
            inter += intersection_area(p, t)?;
        }
    }
    Ok((2.0 * inter / (ap + at)).clamp(0.0, 1.0))
}

/// Outer boundary of a floor plan's wall graph, counter-clockwise.
///
/// Corners on the same wall are linked in order along it; dangling chains are
/// pruned and the outer face is traced by always taking the rightmost turn.
pub fn plan_polygon(plan: &FloorPlan, tol: f64) -> Result<Vec<Vec2>, EvalError> {
    let nodes = &plan.corners;
    let n = nodes.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for w in &plan.walls {
        let dir = w.b - w.a;
        let len = dir.norm();
        if len <= 0.0 {
            continue;
        }
        let mut on: Vec<(f64, usize)> = (0..n)
            .filter(|&i| w.line_distance(&nodes[i]) <= tol)
            .map(|i| (dir.dot(&(nodes[i] - w.a)) / len, i))
            .filter(|(s, _)| *s >= -tol && *s <= len + tol)
            .collect();
        on.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for p in on.windows(2) {
            let (i, j) = (p[0].1, p[1].1);
            if i != j && !adj[i].contains(&j) {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    // Prune degree-one chains.
    let mut alive = vec![true; n];
    loop {
        let mut changed = false;
        for i in 0..n {
            if alive[i] && adj[i].iter().filter(|&&j| alive[j]).count() < 2 {
                alive[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let start = (0..n)
        .filter(|&i| alive[i])
        .min_by(|&i, &j| nodes[i].x.total_cmp(&nodes[j].x).then(nodes[i].y.total_cmp(&nodes[j].y)))
        .ok_or_else(|| EvalError::InvalidPolygon("plan has no closed wall loop".into()))?;

    let angle = |v: &Vec2| v.y.atan2(v.x);
    let mut poly = vec![nodes[start]];
    let (mut prev_heading, mut cur, mut prev) = (-std::f64::consts::FRAC_PI_2, start, usize::MAX);
    let mut first_edge: Option<(usize, usize)> = None;
    // Going back along the arriving edge is the last resort; its turn is +-pi
    // and would otherwise win whenever rounding lands it on -pi.
    let turn = |cur: usize, prev: usize, j: usize, heading: f64| {
        if j == prev {
            f64::INFINITY
        } else {
            crate::geometry::wrap_angle(angle(&(nodes[j] - nodes[cur])) - heading)
        }
    };
    for _ in 0..=4 * n {
        let next = adj[cur]
            .iter()
            .copied()
            .filter(|&j| alive[j])
            .min_by(|&a, &b| {
                turn(cur, prev, a, prev_heading).total_cmp(&turn(cur, prev, b, prev_heading)).then(a.cmp(&b))
            })
            .expect("alive nodes have at least two alive neighbours");
        match first_edge {
            Some(e) if e == (cur, next) => break,
            None => first_edge = Some((cur, next)),
            _ => {}
        }
        if next != start || poly.len() == 1 {
            poly.push(nodes[next]);
        }
        prev_heading = angle(&(nodes[next] - nodes[cur]));
        prev = cur;
        cur = next;
    }
    if poly.len() > 1 && (poly[poly.len() - 1] - poly[0]).norm() < 1e-12 {
        poly.pop();
    }
    validate_polygon(&poly)?;
    Ok(ccw(&poly))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::LineSegment2;

    fn square(x0: f64, y0: f64, s: f64) -> Vec<Vec2> {
        vec![Vec2::new(x0, y0), Vec2::new(x0 + s, y0), Vec2::new(x0 + s, y0 + s), Vec2::new(x0, y0 + s)]
    }

    #[test]
    fn fscore_examples() {
        let a = square(0.0, 0.0, 1.0);
        assert!((fscore(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap() - 1.0).abs() < 1e-12);
        let b = square(0.5, 0.0, 1.0);
        assert!((fscore(std::slice::from_ref(&a), &[b]).unwrap() - 0.5).abs() < 1e-12);
        let c = square(3.0, 0.0, 1.0);
        assert_eq!(fscore(std::slice::from_ref(&a), &[c]).unwrap(), 0.0);
    }

    #[test]
    fn clockwise_and_nonconvex_inputs() {
        let l = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(2.0, 1.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 2.0),
            Vec2::new(0.0, 2.0),
        ];
        let mut cw = square(0.5, 0.5, 1.0);
        cw.reverse();
        // L-shape minus the notch [1,1.5]x[1,1.5]: 1 - 0.25.
        assert!((intersection_area(&l, &cw).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn self_intersecting_is_invalid() {
        let bow = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        assert!(matches!(validate_polygon(&bow), Err(EvalError::InvalidPolygon(_))));
        assert!(fscore(&[bow], &[square(0.0, 0.0, 1.0)]).is_err());
    }

    #[test]
    fn plan_polygon_ignores_spurs() {
        let c = square(0.0, 0.0, 4.0);
        let mut walls: Vec<LineSegment2> = (0..4).map(|i| LineSegment2::new(c[i], c[(i + 1) % 4])).collect();
        walls.push(LineSegment2::new(Vec2::new(2.0, 0.0), Vec2::new(2.0, 1.0)));
        let mut corners = c.clone();
        corners.push(Vec2::new(2.0, 0.0));
        corners.push(Vec2::new(2.0, 1.0));
        let poly = plan_polygon(&FloorPlan { walls, corners }, 1e-6).unwrap();
        assert!((signed_area(&poly) - 16.0).abs() < 1e-12);
    }

    #[test]
    fn plan_polygon_does_not_turn_back_on_long_thin_rooms() {
        let v = |x, y| Vec2::new(x, y);
        let corners = vec![v(21.20977, -7.69457), v(-1.72961, -0.50596), v(21.80578, -5.78562), v(-1.13223, 1.40267)];
        let walls = vec![
            LineSegment2::new(v(-1.751, -0.499), v(21.217, -7.697)),
            LineSegment2::new(v(-1.133, 1.403), v(21.819, -5.790)),
            LineSegment2::new(v(21.208, -7.699), v(21.806, -5.785)),
            LineSegment2::new(v(-1.730, -0.506), v(-1.129, 1.413)),
        ];
        let poly = plan_polygon(&FloorPlan { walls, corners }, 0.05).unwrap();
        assert_eq!(poly.len(), 4);
        assert!(signed_area(&poly) > 45.0);
    }
}
