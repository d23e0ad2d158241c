use crate::error::{invalid, Result};
use crate::neuralnet::network::Architecture;

/// Relative validation-loss improvement required to keep adding depth.
pub const MIN_RELATIVE_IMPROVEMENT: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct DepthSelection<S> {
    pub chosen: Architecture,
    pub chosen_result: S,
    /// (conv layers, validation cross-entropy) for every depth trained.
    pub trained: Vec<(usize, f64)>,
}

/// Trains architectures in order of increasing depth and stops once the
/// validation loss improves by less than 1% over the previous depth.
/// `trainer` returns the validation cross-entropy plus any payload to keep.
pub fn select_depth<S, F>(family: &[Architecture], mut trainer: F) -> Result<DepthSelection<S>>
where
    F: FnMut(&Architecture) -> Result<(f64, S)>,
{
    if family.is_empty() {
        return Err(invalid("family", "no architectures to train"));
    }
    if family.windows(2).any(|w| w[1].conv_layers <= w[0].conv_layers) {
        return Err(invalid("family", "depths must be strictly increasing"));
    }
    let mut trained = Vec::new();
    let mut best: Option<(Architecture, f64, S)> = None;
    let mut previous: Option<f64> = None;
    for arch in family {
        let (loss, payload) = trainer(arch)?;
        trained.push((arch.conv_layers, loss));
        let keep = best.as_ref().is_none_or(|(_, b, _)| loss < *b);
        if keep {
            best = Some((*arch, loss, payload));
        }
        if let Some(prev) = previous {
            if prev - loss < MIN_RELATIVE_IMPROVEMENT * prev {
                break;
            }
        }
        previous = Some(loss);
    }
    let (chosen, _, chosen_result) = best.expect("at least one depth trained");
    Ok(DepthSelection {
        chosen,
        chosen_result,
        trained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::network::ALLOWED_DEPTHS;

    fn family() -> Vec<Architecture> {
        ALLOWED_DEPTHS.iter().map(|&d| Architecture::new(d, 8, 8, 2)).collect()
    }

    fn scripted(losses: &[(usize, f64)]) -> impl FnMut(&Architecture) -> Result<(f64, ())> + '_ {
        move |a| Ok((losses.iter().find(|(d, _)| *d == a.conv_layers).unwrap().1, ()))
    }

    #[test]
    fn stops_after_first_insignificant_gain() {
        let losses = [(1, 1.0), (3, 0.5), (5, 0.499), (7, 0.1), (9, 0.1), (11, 0.1)];
        let sel = select_depth(&family(), scripted(&losses)).unwrap();
        assert_eq!(sel.trained.len(), 3);
        assert_eq!(sel.chosen.conv_layers, 5);
    }

    #[test]
    fn returns_minimum_when_last_depth_worse() {
        let losses = [(1, 1.0), (3, 0.5), (5, 0.6), (7, 0.1), (9, 0.1), (11, 0.1)];
        let sel = select_depth(&family(), scripted(&losses)).unwrap();
        assert_eq!(sel.trained, vec![(1, 1.0), (3, 0.5), (5, 0.6)]);
        assert_eq!(sel.chosen.conv_layers, 3);
    }

    #[test]
    fn trains_everything_while_gains_continue() {
        let losses = [(1, 1.0), (3, 0.9), (5, 0.8), (7, 0.7), (9, 0.6), (11, 0.5)];
        let sel = select_depth(&family(), scripted(&losses)).unwrap();
        assert_eq!(sel.trained.len(), 6);
        assert_eq!(sel.chosen.conv_layers, 11);
    }

    #[test]
    fn rejects_bad_family() {
        assert!(select_depth::<(), _>(&[], |_| Ok((0.0, ()))).is_err());
        let mut f = family();
        f.swap(0, 1);
        assert!(select_depth(&f, |_| Ok((0.0, ()))).is_err());
    }
}
