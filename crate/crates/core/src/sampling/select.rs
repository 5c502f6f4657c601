use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SamplingError;
use crate::model::{OperationBinding, SemanticModel};
use crate::spec::Method;

/// Selection weights. Unlisted entries weigh 1.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightTable {
    pub per_method: BTreeMap<Method, f64>,
    /// Keyed by operation key; overrides the method weight.
    pub per_operation: BTreeMap<String, f64>,
    pub per_resource: BTreeMap<String, f64>,
}

impl WeightTable {
    pub fn operation_weight(&self, binding: &OperationBinding) -> f64 {
        if let Some(w) = self.per_operation.get(&binding.operation) {
            return *w;
        }
        method_of(&binding.operation)
            .and_then(|m| self.per_method.get(&m).copied())
            .unwrap_or(1.0)
    }

    pub fn resource_weight(&self, resource: &str) -> f64 {
        self.per_resource.get(resource).copied().unwrap_or(1.0)
    }
}

fn method_of(operation: &str) -> Option<Method> {
    operation.split_once(' ').and_then(|(m, _)| m.parse().ok())
}

fn path_of(operation: &str) -> &str {
    operation.split_once(' ').map_or(operation, |(_, p)| p)
}

fn usable(w: f64) -> bool {
    w.is_finite() && w > 0.0
}

/// Precomputed two-stage draw: a resource by resource weight, then one of
/// its operations by operation weight.
#[derive(Debug, Clone)]
pub struct Selector {
    resources: Vec<String>,
    resource_index: WeightedIndex<f64>,
    /// Per resource: binding indices into the model and their distribution.
    operations: Vec<(Vec<usize>, WeightedIndex<f64>)>,
}

impl Selector {
    pub fn new(
        model: &SemanticModel,
        weights: &WeightTable,
        exclude_path_prefixes: &[String],
    ) -> Result<Selector, SamplingError> {
        let mut by_resource: BTreeMap<&str, Vec<(usize, f64)>> = BTreeMap::new();
        for (i, b) in model.bindings.iter().enumerate() {
            let path = path_of(&b.operation);
            if exclude_path_prefixes.iter().any(|p| path.starts_with(p.as_str())) {
                continue;
            }
            let w = weights.operation_weight(b);
            if usable(w) {
                by_resource.entry(&b.resource).or_default().push((i, w));
            }
        }
        let mut resources = Vec::new();
        let mut resource_weights = Vec::new();
        let mut operations = Vec::new();
        for (resource, ops) in by_resource {
            let w = weights.resource_weight(resource);
            if !usable(w) {
                continue;
            }
            let dist = WeightedIndex::new(ops.iter().map(|(_, w)| *w))
                .map_err(|_| SamplingError::NoSelectableOperation)?;
            resources.push(resource.to_string());
            resource_weights.push(w);
            operations.push((ops.into_iter().map(|(i, _)| i).collect(), dist));
        }
        let resource_index =
            WeightedIndex::new(resource_weights).map_err(|_| SamplingError::NoSelectableOperation)?;
        Ok(Selector {
            resources,
            resource_index,
            operations,
        })
    }

    /// Index into `model.bindings` of the drawn operation.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let r = self.resource_index.sample(rng);
        let (ops, dist) = &self.operations[r];
        ops[dist.sample(rng)]
    }

    /// True when the binding can be drawn at all.
    pub fn is_selectable(&self, binding: usize) -> bool {
        self.operations.iter().any(|(ops, _)| ops.contains(&binding))
    }

    /// Resources that can be drawn, in draw order.
    pub fn resources(&self) -> &[String] {
        &self.resources
    }
}

/// One draw with a freshly built selector.
pub fn select_operation<'m, R: Rng + ?Sized>(
    model: &'m SemanticModel,
    weights: &WeightTable,
    rng: &mut R,
) -> Result<&'m OperationBinding, SamplingError> {
    let selector = Selector::new(model, weights, &[])?;
    Ok(&model.bindings[selector.draw(rng)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CrudKind, Provenance};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn binding(op: &str, resource: &str, kind: CrudKind) -> OperationBinding {
        OperationBinding {
            operation: op.into(),
            resource: resource.into(),
            crud_kind: kind,
            provenance: Provenance::Inferred,
        }
    }

    fn put_get_model() -> SemanticModel {
        SemanticModel {
            resources: vec![],
            bindings: vec![
                binding("PUT /things/{id}", "thing", CrudKind::Update),
                binding("GET /things/{id}", "thing", CrudKind::Read),
            ],
            edges: vec![],
        }
    }

    #[test]
    fn single_operation_always_selected() {
        let model = SemanticModel {
            bindings: vec![binding("GET /", "root", CrudKind::Other)],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let b = select_operation(&model, &WeightTable::default(), &mut rng).unwrap();
            assert_eq!(b.operation, "GET /");
        }
    }

    #[test]
    fn put_get_two_to_one_passes_chi_square() {
        let model = put_get_model();
        let mut weights = WeightTable::default();
        weights.per_method.insert(Method::Put, 2.0);
        weights.per_method.insert(Method::Get, 1.0);
        let selector = Selector::new(&model, &weights, &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let puts = (0..n).filter(|_| selector.draw(&mut rng) == 0).count() as f64;
        let gets = n as f64 - puts;
        let (ep, eg) = (n as f64 * 2.0 / 3.0, n as f64 / 3.0);
        let stat = (puts - ep).powi(2) / ep + (gets - eg).powi(2) / eg;
        let critical = ChiSquared::new(1.0).unwrap().inverse_cdf(0.99);
        assert!(stat < critical, "chi-square {stat} >= {critical}");
    }

    #[test]
    fn zero_weight_resource_never_selected() {
        let model = SemanticModel {
            bindings: vec![
                binding("GET /a", "a", CrudKind::ReadList),
                binding("GET /b", "b", CrudKind::ReadList),
            ],
            ..Default::default()
        };
        let mut weights = WeightTable::default();
        weights.per_resource.insert("a".into(), 0.0);
        let selector = Selector::new(&model, &weights, &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..5_000).all(|_| selector.draw(&mut rng) == 1));
    }

    #[test]
    fn all_zero_is_an_error_and_exclusions_apply() {
        let model = put_get_model();
        let mut weights = WeightTable::default();
        weights.per_method.insert(Method::Put, 0.0);
        weights.per_method.insert(Method::Get, 0.0);
        assert_eq!(
            Selector::new(&model, &weights, &[]).unwrap_err(),
            SamplingError::NoSelectableOperation
        );
        let excluded = Selector::new(&model, &WeightTable::default(), &["/things".to_string()]);
        assert!(excluded.is_err());
    }

    #[test]
    fn operation_override_beats_method_weight() {
        let mut weights = WeightTable::default();
        weights.per_method.insert(Method::Get, 5.0);
        weights.per_operation.insert("GET /things/{id}".into(), 0.5);
        let model = put_get_model();
        assert_eq!(weights.operation_weight(&model.bindings[1]), 0.5);
        assert_eq!(weights.operation_weight(&model.bindings[0]), 1.0);
    }

    fn frequency(weights: &WeightTable, seed: u64, target: usize) -> usize {
        let model = SemanticModel {
            bindings: vec![
                binding("GET /x", "x", CrudKind::ReadList),
                binding("POST /x", "x", CrudKind::Create),
                binding("DELETE /x/{id}", "x", CrudKind::Delete),
                binding("GET /y", "y", CrudKind::ReadList),
            ],
            ..Default::default()
        };
        let selector = Selector::new(&model, weights, &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..10_000).filter(|_| selector.draw(&mut rng) == target).count()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn raising_a_weight_never_lowers_its_frequency(
            seed in any::<u64>(),
            base in 0.1f64..4.0,
            bump in 0.0f64..4.0,
            target in 0usize..3,
        ) {
            let ops = ["GET /x", "POST /x", "DELETE /x/{id}"];
            let mut low = WeightTable::default();
            low.per_operation.insert(ops[target].into(), base);
            let mut high = low.clone();
            high.per_operation.insert(ops[target].into(), base + bump);
            prop_assert!(frequency(&high, seed, target) >= frequency(&low, seed, target));
        }
    }
}
