//! The assembled model: an environment plus per-state queueing parameters.


use crate::distributions::{DistributionLaw, ResourceVectorLaw};
use crate::environment::SemiMarkovEnvironment;
use crate::error::{Diagnostic, Error, Result};
use crate::map_core::{arrival_rates, stationary_vector, MarkedMap};

/// Arrival process, service laws and resource laws active in one
/// environment state.
#[derive(Debug, Clone)]
pub struct StateModel {
    map: MarkedMap,
    pi: Vec<f64>,
    rates: Vec<f64>,
    service: Vec<DistributionLaw>,
    arrival_resources: Vec<ResourceVectorLaw>,
    departure_resources: Vec<ResourceVectorLaw>,
}

impl StateModel {
    pub fn new(
        map: MarkedMap,
        service: Vec<DistributionLaw>,
        arrival_resources: Vec<ResourceVectorLaw>,
        departure_resources: Vec<ResourceVectorLaw>,
    ) -> Result<Self> {
        let k = map.types();
        let mut diags = Vec::new();
        for (name, len) in [
            ("service", service.len()),
            ("arrival_resources", arrival_resources.len()),
            ("departure_resources", departure_resources.len()),
        ] {
            if len != k {
                diags.push(Diagnostic::new(
                    "type-count",
                    name,
                    format!("expected {k} entries (one per customer type), got {len}"),
                ));
            }
        }
        if !diags.is_empty() {
            return Err(Error::Invalid(diags));
        }
        let dim = arrival_resources[0].dim();
        for (name, laws) in [
            ("arrival_resources", &arrival_resources),
            ("departure_resources", &departure_resources),
        ] {
            for (r, law) in laws.iter().enumerate() {
                if law.dim() != dim {
                    diags.push(Diagnostic::new(
                        "resource-dimension",
                        format!("{name}[{r}]"),
                        format!("expected {dim} resource components, got {}", law.dim()),
                    ));
                }
            }
        }
        if !diags.is_empty() {
            return Err(Error::Invalid(diags));
        }
        let (pi, rates) = if map.is_silent() {
            // No arrivals ever happen, so the phase law is irrelevant.
            let m = map.order();
            (vec![1.0 / m as f64; m], vec![0.0; k])
        } else {
            let pi = stationary_vector(&map)?;
            let rates = arrival_rates(&map, &pi);
            (pi.into_vec(), rates)
        };
        Ok(Self {
            map,
            pi,
            rates,
            service,
            arrival_resources,
            departure_resources,
        })
    }

    pub fn map(&self) -> &MarkedMap {
        &self.map
    }

    /// Stationary phase distribution of the MAP.
    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Stationary arrival rate per type.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn service(&self) -> &[DistributionLaw] {
        &self.service
    }

    pub fn arrival_resources(&self) -> &[ResourceVectorLaw] {
        &self.arrival_resources
    }

    pub fn departure_resources(&self) -> &[ResourceVectorLaw] {
        &self.departure_resources
    }

    pub fn types(&self) -> usize {
        self.map.types()
    }

    pub fn resources(&self) -> usize {
        self.arrival_resources[0].dim()
    }

    /// True for the Poisson form `D_0 = -α I`, `D_r = α_r I`.
    pub fn is_poisson(&self) -> bool {
        let m = self.map.order();
        let diag_only = |a: &crate::linalg::RMatrix| {
            let c = a[(0, 0)];
            (0..m).all(|i| (0..m).all(|j| a[(i, j)] == if i == j { c } else { 0.0 }))
        };
        diag_only(self.map.d0()) && self.map.marks().iter().all(diag_only)
    }

    /// Time after which every service survival is below `eps`.
    pub fn service_tail_point(&self, eps: f64) -> f64 {
        self.service.iter().map(|b| b.tail_point(eps)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    environment: SemiMarkovEnvironment,
    states: Vec<StateModel>,
}

impl Model {
    pub fn new(environment: SemiMarkovEnvironment, states: Vec<StateModel>) -> Result<Self> {
        let d = environment.states();
        if states.len() != d {
            return Err(Error::invalid(
                "dimension",
                "states",
                format!("environment has {d} states but {} state blocks were given", states.len()),
            ));
        }
        let k = states[0].types();
        let res = states[0].resources();
        let mut diags = Vec::new();
        for (i, s) in states.iter().enumerate() {
            if s.types() != k {
                diags.push(Diagnostic::new(
                    "type-count",
                    format!("states[{i}]"),
                    format!("expected {k} customer types, got {}", s.types()),
                ));
            }
            if s.resources() != res {
                diags.push(Diagnostic::new(
                    "resource-dimension",
                    format!("states[{i}]"),
                    format!("expected {res} resource components, got {}", s.resources()),
                ));
            }
        }
        if !diags.is_empty() {
            return Err(Error::Invalid(diags));
        }
        Ok(Self {
            environment,
            states,
        })
    }

    pub fn environment(&self) -> &SemiMarkovEnvironment {
        &self.environment
    }

    pub fn states(&self) -> &[StateModel] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &StateModel {
        &self.states[i]
    }

    pub fn types(&self) -> usize {
        self.states[0].types()
    }

    pub fn resources(&self) -> usize {
        self.states[0].resources()
    }

    /// Points at which some rate or survival function may have a kink.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = self.environment.breakpoints();
        for s in &self.states {
            for b in s.service() {
                pts.extend(b.breakpoints());
            }
        }
        pts
    }

    /// Same model with every MAP sped up by `factor`, which multiplies all
    /// arrival rates by `factor`.
    pub fn scale_arrivals(&self, factor: f64) -> Result<Self> {
        let states = self
            .states
            .iter()
            .map(|s| {
                let map = MarkedMap::new(
                    s.map.d0() * factor,
                    s.map.marks().iter().map(|d| d * factor).collect(),
                )?;
                StateModel::new(
                    map,
                    s.service.clone(),
                    s.arrival_resources.clone(),
                    s.departure_resources.clone(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Model::new(self.environment.clone(), states)
    }
}
