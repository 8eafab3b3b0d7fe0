//! Index-time shift that imitates event-dependent treatment in controls.
//!
//! An event at `e` multiplies the treatment hazard by `theta` on `(e, e + delta]`.
//! Under a constant baseline hazard this moves an index time `B` that follows
//! `e` by `(1 - theta) * delta` when the whole window precedes `B`, and by
//! `(B - e) * (1 / theta - 1)` when `B` falls inside the accelerated window.

/// One application of the shift for a single preceding event `e < b`.
pub fn shift_once(b: f64, e: f64, theta: f64, delta: f64) -> f64 {
    if e + theta * delta < b {
        b + (1.0 - theta) * delta
    } else {
        b + (b - e) * (1.0 / theta - 1.0)
    }
}

/// Shifted index time for a participant with sorted `events`.
///
/// For `theta > 1` only the latest event before `b` moves it (earlier). For
/// `theta < 1` every event preceding the current index time is applied in
/// ascending order, including events overtaken by an earlier delay.
pub fn shift_index_time(b: f64, events: &[f64], theta: f64, delta: f64) -> f64 {
    debug_assert!(theta > 0.0 && delta >= 0.0);
    if theta == 1.0 || delta == 0.0 {
        return b;
    }
    if theta > 1.0 {
        return match events.iter().rev().find(|&&e| e < b) {
            Some(&e) => shift_once(b, e, theta, delta),
            None => b,
        };
    }
    let mut current = b;
    for &e in events {
        if e >= current {
            break;
        }
        current = shift_once(current, e, theta, delta);
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn delayed_by_half_window() {
        assert_eq!(shift_index_time(110.0, &[100.0], 0.5, 10.0), 115.0);
    }

    #[test]
    fn accelerated_from_latest_event() {
        assert_eq!(shift_index_time(100.0, &[50.0, 60.0], 2.0, 10.0), 90.0);
    }

    #[test]
    fn delay_overtakes_later_event() {
        assert_eq!(shift_index_time(100.0, &[50.0], 0.5, 10.0), 105.0);
        assert_eq!(shift_index_time(100.0, &[50.0, 102.0], 0.5, 10.0), 108.0);
    }

    #[test]
    fn inside_window_branches() {
        // B inside (e, e + theta * delta]: B' = e + (B - e) / theta.
        assert_eq!(shift_index_time(100.0, &[95.0], 2.0, 10.0), 97.5);
        assert_eq!(shift_index_time(100.0, &[98.0], 0.5, 10.0), 102.0);
    }

    #[test]
    fn no_preceding_event() {
        assert_eq!(shift_index_time(100.0, &[120.0], 4.0, 20.0), 100.0);
        assert_eq!(shift_index_time(100.0, &[], 0.25, 20.0), 100.0);
    }

    fn sorted_events() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..300.0, 0..8).prop_map(|mut v| {
            v.sort_by(f64::total_cmp);
            v
        })
    }

    proptest! {
        #[test]
        fn identity_cases(b in 1.0f64..300.0, ev in sorted_events(), theta in 0.1f64..8.0, delta in 0.0f64..60.0) {
            prop_assert_eq!(shift_index_time(b, &ev, 1.0, delta), b);
            prop_assert_eq!(shift_index_time(b, &ev, theta, 0.0), b);
        }

        #[test]
        fn acceleration_stays_after_latest_event(b in 1.0f64..300.0, ev in sorted_events(), theta in 1.01f64..8.0, delta in 0.1f64..60.0) {
            let s = shift_index_time(b, &ev, theta, delta);
            prop_assert!(s <= b);
            if let Some(&e) = ev.iter().rev().find(|&&e| e < b) {
                prop_assert!(s >= e);
            }
        }

        #[test]
        fn delay_is_monotone(b in 1.0f64..300.0, ev in sorted_events(), theta in 0.05f64..0.99, delta in 0.1f64..60.0) {
            let s = shift_index_time(b, &ev, theta, delta);
            if ev.iter().any(|&e| e < b) {
                prop_assert!(s > b);
            } else {
                prop_assert_eq!(s, b);
            }
            // Each step is nondecreasing: prefixes of the event list never shift further.
            let mut last = b;
            for k in 0..=ev.len() {
                let partial = shift_index_time(b, &ev[..k], theta, delta);
                prop_assert!(partial >= last);
                last = partial;
            }
        }
    }
}
