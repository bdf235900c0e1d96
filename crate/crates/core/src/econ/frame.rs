use std::collections::BTreeMap;

use crate::{Error, Result, Scalar};

/// Column store for a country-year panel. Missing values are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelFrame<T> {
    countries: Vec<String>,
    years: Vec<i32>,
    columns: BTreeMap<String, Vec<Option<T>>>,
}

impl<T: Scalar> PanelFrame<T> {
    pub fn new(countries: Vec<String>, years: Vec<i32>) -> Result<Self> {
        if countries.len() != years.len() {
            return Err(Error::DimensionMismatch { expected: countries.len(), actual: years.len() });
        }
        let mut seen = std::collections::HashSet::new();
        for (c, y) in countries.iter().zip(&years) {
            if !seen.insert((c.as_str(), *y)) {
                return Err(Error::DuplicateKey(format!("({c}, {y})")));
            }
        }
        Ok(PanelFrame { countries, years, columns: BTreeMap::new() })
    }

    pub fn with_column(mut self, name: &str, values: Vec<Option<T>>) -> Result<Self> {
        self.set_column(name, values)?;
        Ok(self)
    }

    pub fn set_column(&mut self, name: &str, values: Vec<Option<T>>) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), actual: values.len() });
        }
        self.columns.insert(name.to_string(), values);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.countries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.countries.is_empty()
    }

    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn column(&self, name: &str) -> Result<&[Option<T>]> {
        self.columns.get(name).map(Vec::as_slice).ok_or_else(|| Error::Config(format!("panel has no column '{name}'")))
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    /// New frame made of the given rows (repeats allowed). Repeated rows get
    /// distinct keys by suffixing the country when `relabel` yields one.
    pub(crate) fn take_rows(&self, rows: &[usize], relabel: impl Fn(usize, &str) -> String) -> PanelFrame<T> {
        PanelFrame {
            countries: rows.iter().enumerate().map(|(k, &r)| relabel(k, &self.countries[r])).collect(),
            years: rows.iter().map(|&r| self.years[r]).collect(),
            columns: self.columns.iter().map(|(name, col)| (name.clone(), rows.iter().map(|&r| col[r]).collect())).collect(),
        }
    }

    /// Adds `{var}_lag{k}` for each var: the value at year t-k of the same
    /// country, or missing when that year is absent.
    pub fn add_lags(&mut self, vars: &[&str], k: i32) -> Result<()> {
        let index: std::collections::HashMap<(&str, i32), usize> =
            self.countries.iter().zip(&self.years).enumerate().map(|(i, (c, &y))| ((c.as_str(), y), i)).collect();
        let mut new_cols = Vec::new();
        for var in vars {
            let src = self.column(var)?;
            let lagged: Vec<Option<T>> = (0..self.len())
                .map(|i| index.get(&(self.countries[i].as_str(), self.years[i] - k)).and_then(|&j| src[j]))
                .collect();
            new_cols.push((format!("{var}_lag{k}"), lagged));
        }
        for (name, col) in new_cols {
            self.columns.insert(name, col);
        }
        Ok(())
    }
}
