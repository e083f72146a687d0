//! Bounded parallel fan-out with order-stable results, and the matching
//! virtual-time makespan.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Runs `f` over `items` on at most `max_parallel` threads. Output order
/// follows input order regardless of completion order.
pub fn fan_out<T, R, F>(items: &[T], max_parallel: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = max_parallel.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                slots.lock().expect("fan-out slots poisoned")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("fan-out slots poisoned")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Completion time of jobs dispatched in order to `workers` identical
/// workers, each job going to the earliest-free worker.
pub fn makespan(durations: &[f64], workers: usize) -> f64 {
    let mut free_at = vec![0.0f64; workers.max(1)];
    let mut end = 0.0f64;
    for &d in durations {
        let (slot, start) = free_at
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, t)| if t < acc.1 { (i, t) } else { acc });
        free_at[slot] = start + d;
        end = end.max(start + d);
    }
    end
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn makespan_examples() {
        assert_eq!(makespan(&[300.0, 300.0, 300.0], 3), 300.0);
        assert_eq!(makespan(&[300.0, 300.0, 300.0], 1), 900.0);
        assert_eq!(makespan(&[100.0, 50.0, 70.0], 2), 120.0);
        assert_eq!(makespan(&[], 4), 0.0);
    }

    #[test]
    fn fan_out_preserves_order() {
        let items: Vec<u64> = (0..40).collect();
        let out = fan_out(&items, 7, |i, &x| {
            std::thread::sleep(std::time::Duration::from_micros((40 - x) * 50));
            (i, x * 2)
        });
        assert_eq!(out, items.iter().map(|&x| (x as usize, x * 2)).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn makespan_bounds(d in prop::collection::vec(0.0f64..1000.0, 1..20), w in 1usize..8) {
            let m = makespan(&d, w);
            let max = d.iter().cloned().fold(0.0, f64::max);
            let sum: f64 = d.iter().sum();
            prop_assert!(m >= max - 1e-9 && m <= sum + 1e-9);
            if w >= d.len() {
                prop_assert_eq!(m, max);
            }
        }
    }
}
