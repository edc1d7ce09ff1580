//! Shared cache of front profiles keyed by speed.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::error::Result;
use crate::nonlinearity::Nonlinearity;
use crate::profiles::{solve_profile_auto, FrontProfile};

/// Thread-safe profile cache. Speeds are matched bit for bit.
#[derive(Debug)]
pub struct ProfileBank {
    nl: Nonlinearity,
    cache: Mutex<HashMap<u64, Arc<FrontProfile>>>,
}

impl ProfileBank {
    pub fn new(nl: Nonlinearity) -> Self {
        Self {
            nl,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nl
    }

    pub fn len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Profile of speed `c`, solved on first use.
    pub fn get(&self, c: f64) -> Result<Arc<FrontProfile>> {
        if let Some(p) = self.cache.lock().unwrap().get(&c.to_bits()) {
            return Ok(p.clone());
        }
        let p = Arc::new(solve_profile_auto(&self.nl, c)?);
        Ok(self
            .cache
            .lock()
            .unwrap()
            .entry(c.to_bits())
            .or_insert(p)
            .clone())
    }

    /// Profiles for all `speeds`, solving the missing ones in parallel.
    pub fn get_many(&self, speeds: &[f64]) -> Result<Vec<Arc<FrontProfile>>> {
        let missing: Vec<f64> = {
            let cache = self.cache.lock().unwrap();
            let mut seen = std::collections::HashSet::new();
            speeds
                .iter()
                .copied()
                .filter(|c| !cache.contains_key(&c.to_bits()) && seen.insert(c.to_bits()))
                .collect()
        };
        let solved: Vec<(u64, FrontProfile)> = missing
            .par_iter()
            .map(|&c| solve_profile_auto(&self.nl, c).map(|p| (c.to_bits(), p)))
            .collect::<Result<_>>()?;
        {
            let mut cache = self.cache.lock().unwrap();
            for (k, p) in solved {
                cache.entry(k).or_insert_with(|| Arc::new(p));
            }
        }
        let cache = self.cache.lock().unwrap();
        Ok(speeds.iter().map(|c| cache[&c.to_bits()].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_are_cached_by_speed() {
        let bank = ProfileBank::new(Nonlinearity::logistic());
        let a = bank.get(3.0).unwrap();
        let b = bank.get_many(&[3.0, 2.5, 2.5]).unwrap();
        assert!(Arc::ptr_eq(&a, &b[0]));
        assert!(Arc::ptr_eq(&b[1], &b[2]));
        assert_eq!(bank.len(), 2);
        assert!(bank.get(1.0).is_err());
    }
}
