//! Order-preserving parallel map with a fixed worker bound, used to
//! fan item-level backend calls out under the configured concurrency
//! limit.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

/// Applies `f` to every item on up to `limit` worker threads and
/// returns the results in input order. Panics in `f` propagate.
pub fn parallel_map<T, U, F>(items: &[T], limit: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync,
{
    let workers = limit.clamp(1, items.len().max(1));
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, item)| f(i, item)).collect();
    }

    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<U>> = std::iter::repeat_with(|| None).take(items.len()).collect();
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let f = &f;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                if tx.send((i, f(i, &items[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, value) in rx {
            slots[i] = Some(value);
        }
    });
    slots.into_iter().map(|slot| slot.expect("every slot filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicI64;

    #[test]
    fn preserves_input_order() {
        let items: Vec<u32> = (0..100).collect();
        let doubled = parallel_map(&items, 8, |_, &x| x * 2);
        assert_eq!(doubled, (0..100).map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn empty_input_yields_empty_output() {
        let out: Vec<u32> = parallel_map(&[] as &[u32], 4, |_, &x| x);
        assert!(out.is_empty());
    }

    #[test]
    fn respects_the_worker_bound() {
        let in_flight = AtomicI64::new(0);
        let high_water = AtomicI64::new(0);
        let items: Vec<u32> = (0..64).collect();
        parallel_map(&items, 3, |_, _| {
            let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            high_water.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(2));
            in_flight.fetch_sub(1, Ordering::SeqCst);
        });
        let peak = high_water.load(Ordering::SeqCst);
        assert!(peak <= 3, "saw {peak} concurrent calls");
        assert!(peak >= 2, "workers never overlapped");
    }

    #[test]
    fn indices_match_items() {
        let items = ["a", "b", "c"];
        let tagged = parallel_map(&items, 2, |i, &s| format!("{i}{s}"));
        assert_eq!(tagged, vec!["0a", "1b", "2c"]);
    }
}
