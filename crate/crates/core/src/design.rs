//! Probability-proportional-to-size sampling.
//!
//! Samples are drawn by systematic PPS on a uniformly permuted frame, which
//! gives first-order inclusion probabilities `pi_i = n z_i / sum(z)` exactly.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::synthpop::PopulationFrame;

/// `w_i pi_i` must be 1 within this tolerance when a sample is loaded.
pub const WEIGHT_CHECK_TOL: f64 = 1e-9;

/// The observed sample: the only input the estimators see.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleData {
    /// Frame index of each sampled unit, increasing.
    pub unit_ids: Vec<usize>,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub pi: DVector<f64>,
    pub w: DVector<f64>,
    pub z: Option<DVector<f64>>,
    /// Size `N` of the population the sample was drawn from.
    pub population_size: f64,
}

impl SampleData {
    pub fn new(
        unit_ids: Vec<usize>,
        y: DVector<f64>,
        x: DMatrix<f64>,
        v: DMatrix<f64>,
        pi: DVector<f64>,
        z: Option<DVector<f64>>,
        population_size: f64,
    ) -> Result<Self> {
        let n = y.len();
        let aligned = unit_ids.len() == n
            && x.nrows() == n
            && v.nrows() == n
            && pi.len() == n
            && z.as_ref().is_none_or(|z| z.len() == n);
        if !aligned {
            return Err(Error::Dimension("sample columns differ in length".into()));
        }
        if let Some((i, p)) = pi.iter().enumerate().find(|(_, &p)| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Data(format!("row {i}: inclusion probability {p} outside (0, 1)")));
        }
        if !(population_size >= n as f64) {
            return Err(Error::Data(format!("population size {population_size} smaller than sample size {n}")));
        }
        let w = pi.map(|p| 1.0 / p);
        Ok(Self { unit_ids, y, x, v, pi, w, z, population_size })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// `S_pi = (N / n) sum_{i in S} pi_i`.
    pub fn s_pi(&self) -> f64 {
        self.population_size / self.n() as f64 * self.pi.sum()
    }

    /// CSV with header `unit_id,y,x1..,v1..,pi,w[,z]`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["unit_id".to_string(), "y".to_string()];
        header.extend((1..=self.x.ncols()).map(|j| format!("x{j}")));
        header.extend((1..=self.v.ncols()).map(|j| format!("v{j}")));
        header.extend(["pi".to_string(), "w".to_string()]);
        if self.z.is_some() {
            header.push("z".into());
        }
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut row = vec![self.unit_ids[i].to_string(), self.y[i].to_string()];
            row.extend(self.x.row(i).iter().map(f64::to_string));
            row.extend(self.v.row(i).iter().map(f64::to_string));
            row.push(self.pi[i].to_string());
            row.push(self.w[i].to_string());
            if let Some(z) = &self.z {
                row.push(z[i].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Load a sample CSV. Weights are recomputed from `pi` and the file's `w`
    /// column must agree with them. When `population_size` is `None` it is
    /// estimated by `sum(w)`.
    pub fn read_csv<R: Read>(input: R, population_size: Option<f64>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let find = |name: &str| header.iter().position(|h| h == name);
        let numbered = |prefix: char| -> Vec<usize> {
            let mut cols: Vec<(usize, usize)> = header
                .iter()
                .enumerate()
                .filter_map(|(i, h)| {
                    h.strip_prefix(prefix).and_then(|k| k.parse::<usize>().ok()).map(|k| (k, i))
                })
                .collect();
            cols.sort();
            cols.into_iter().map(|(_, i)| i).collect()
        };
        let need = |name: &str| find(name).ok_or_else(|| Error::Data(format!("missing column `{name}`")));
        let (c_id, c_y, c_pi, c_w) = (need("unit_id")?, need("y")?, need("pi")?, need("w")?);
        let c_z = find("z");
        let (c_x, c_v) = (numbered('x'), numbered('v'));

        let mut ids = Vec::new();
        let (mut y, mut pi, mut z) = (Vec::new(), Vec::new(), Vec::new());
        let (mut xs, mut vs) = (Vec::new(), Vec::new());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |c: usize| -> Result<f64> {
                let raw = rec.get(c).unwrap_or("").trim();
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Data(format!("row {}: `{}` is not a finite number", line + 1, raw)))
            };
            let id = rec
                .get(c_id)
                .and_then(|s| s.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::Data(format!("row {}: bad unit_id", line + 1)))?;
            let p = num(c_pi)?;
            let wt = num(c_w)?;
            if (wt * p - 1.0).abs() > WEIGHT_CHECK_TOL {
                return Err(Error::Data(format!(
                    "row {}: weight {wt} is not the reciprocal of pi {p}",
                    line + 1
                )));
            }
            ids.push(id);
            y.push(num(c_y)?);
            pi.push(p);
            for &c in &c_x {
                xs.push(num(c)?);
            }
            for &c in &c_v {
                vs.push(num(c)?);
            }
            if let Some(c) = c_z {
                z.push(num(c)?);
            }
        }
        let n = y.len();
        if n == 0 {
            return Err(Error::Data("sample file has no rows".into()));
        }
        let pi = DVector::from_vec(pi);
        let big_n = population_size.unwrap_or_else(|| pi.map(|p| 1.0 / p).sum());
        Self::new(
            ids,
            DVector::from_vec(y),
            DMatrix::from_row_slice(n, c_x.len(), &xs),
            DMatrix::from_row_slice(n, c_v.len(), &vs),
            pi,
            c_z.map(|_| DVector::from_vec(z)),
            big_n,
        )
    }
}

/// `pi_i = n z_i / sum_j z_j` for a positive size measure `z`.
pub fn pps_probabilities(z: &[f64], n: usize) -> Result<Vec<f64>> {
    let big_n = z.len();
    if n == 0 || n >= big_n {
        return Err(Error::InvalidSpec(format!("sample size {n} must satisfy 0 < n < N = {big_n}")));
    }
    if let Some((i, &zi)) = z.iter().enumerate().find(|(_, &zi)| !(zi > 0.0 && zi.is_finite())) {
        return Err(Error::InvalidSpec(format!("design variable of unit {i} is {zi}; must be positive")));
    }
    let total: f64 = z.iter().sum();
    let pi: Vec<f64> = z.iter().map(|&zi| n as f64 * zi / total).collect();
    if let Some((unit, &p)) = pi.iter().enumerate().find(|(_, &p)| p >= 1.0) {
        return Err(Error::CertaintyUnit { unit, pi: p });
    }
    Ok(pi)
}

pub fn inclusion_probabilities(frame: &PopulationFrame, n: usize) -> Result<Vec<f64>> {
    pps_probabilities(frame.z.as_slice(), n)
}

/// Systematic selection along `order` with random start `start` in `[0, 1)`.
///
/// Unit `order[k]` is taken when some point `start + j` falls in its
/// cumulative interval. The final interval is closed at `+inf` so rounding in
/// the cumulative sum can never drop the last selection.
pub fn systematic_pps(pi: &[f64], order: &[usize], start: f64, n: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut target = start;
    let last = order.len().saturating_sub(1);
    for (k, &unit) in order.iter().enumerate() {
        if chosen.len() == n {
            break;
        }
        cum += pi[unit];
        if target < cum || k == last {
            chosen.push(unit);
            target += 1.0;
        }
    }
    chosen
}

/// Draw one PPS sample of size `n` from `frame`.
pub fn draw_pps_sample(frame: &PopulationFrame, n: usize, seed: u64) -> Result<SampleData> {
    let pi = inclusion_probabilities(frame, n)?;
    let mut rng = rng::seeded(seed);
    let mut order: Vec<usize> = (0..frame.n_units()).collect();
    order.shuffle(&mut rng);
    let start: f64 = rng.random();
    let mut units = systematic_pps(&pi, &order, start, n);
    units.sort_unstable();
    debug_assert_eq!(units.len(), n);

    let rows = |m: &DMatrix<f64>| DMatrix::from_fn(n, m.ncols(), |i, j| m[(units[i], j)]);
    SampleData::new(
        units.clone(),
        DVector::from_iterator(n, units.iter().map(|&u| frame.y[u])),
        rows(&frame.x),
        rows(&frame.v),
        DVector::from_iterator(n, units.iter().map(|&u| pi[u])),
        Some(DVector::from_iterator(n, units.iter().map(|&u| frame.z[u]))),
        frame.n_units() as f64,
    )
}

/// Pair weight of the proportional-to-size joint-inclusion approximation:
///
/// `((n-1) S / n) / (pi_i + pi_j) * (pi_i / (S - pi_i) + pi_j / (S - pi_j))`
///
/// with `S = (N / n) sum_{i in S} pi_i`. It approximates `pi_ij / (pi_i pi_j)`.
pub fn joint_inclusion_factor(pi_i: f64, pi_j: f64, s_pi: f64, n: usize) -> Result<f64> {
    let max_pi = pi_i.max(pi_j);
    if !(s_pi > max_pi) {
        return Err(Error::DegenerateDesign { s_pi, max_pi });
    }
    let n = n as f64;
    Ok((n - 1.0) * s_pi / n / (pi_i + pi_j) * (pi_i / (s_pi - pi_i) + pi_j / (s_pi - pi_j)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn frame_from_z(z: &[f64]) -> PopulationFrame {
        let n = z.len();
        PopulationFrame {
            y: DVector::from_fn(n, |i, _| i as f64),
            x: DMatrix::from_fn(n, 1, |i, _| i as f64 * 0.5),
            v: DMatrix::from_fn(n, 1, |i, _| (i % 3) as f64),
            z: DVector::from_column_slice(z),
        }
    }

    #[test]
    fn probabilities_hand_values() {
        assert_eq!(pps_probabilities(&[1.0; 4], 2).unwrap(), vec![0.5; 4]);
        let p = pps_probabilities(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        for (a, b) in p.iter().zip([0.2, 0.4, 0.6, 0.8]) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn certainty_units_are_rejected() {
        match pps_probabilities(&[10.0, 1.0, 1.0], 2) {
            Err(Error::CertaintyUnit { unit: 0, pi }) => assert_relative_eq!(pi, 5.0 / 3.0),
            other => panic!("{other:?}"),
        }
        assert!(draw_pps_sample(&frame_from_z(&[10.0, 1.0, 1.0]), 2, 0).is_err());
        assert!(pps_probabilities(&[1.0, 1.0], 2).is_err());
        assert!(pps_probabilities(&[1.0, 0.0, 1.0], 1).is_err());
    }

    #[test]
    fn sample_has_n_distinct_units_and_consistent_weights() {
        let z: Vec<f64> = (1..=40).map(|k| 1.0 + (k as f64).sqrt()).collect();
        let f = frame_from_z(&z);
        for seed in 0..50 {
            let s = draw_pps_sample(&f, 7, seed).unwrap();
            assert_eq!(s.n(), 7);
            assert!(s.unit_ids.windows(2).all(|w| w[0] < w[1]));
            for i in 0..7 {
                assert!((s.w[i] * s.pi[i] - 1.0).abs() < 1e-15);
                assert_eq!(s.y[i], f.y[s.unit_ids[i]]);
            }
        }
    }

    #[test]
    fn start_near_one_still_yields_n_units() {
        let pi = [0.3, 0.3, 0.4, 0.5, 0.5];
        let order = [0, 1, 2, 3, 4];
        let s = systematic_pps(&pi, &order, 1.0 - 1e-16, 2);
        assert_eq!(s.len(), 2);
        assert_ne!(s[0], s[1]);
    }

    #[test]
    fn factor_symmetric_pair_simplifies() {
        let (p, s, n) = (0.3, 7.0, 6);
        let f = joint_inclusion_factor(p, p, s, n).unwrap();
        assert_relative_eq!(f, (n as f64 - 1.0) * s / (n as f64 * (s - p)), epsilon = 1e-14);
    }

    #[test]
    fn factor_hand_value() {
        // (4 * 10 / 5) / 0.6 * (0.2 / 9.8 + 0.4 / 9.6)
        let f = joint_inclusion_factor(0.2, 0.4, 10.0, 5).unwrap();
        let expected = 8.0 / 0.6 * (0.2 / 9.8 + 0.4 / 9.6);
        assert_relative_eq!(f, expected, epsilon = 1e-14);
        assert_relative_eq!(f, 0.827_664_399_092_971, epsilon = 1e-12);
        assert!(matches!(joint_inclusion_factor(0.2, 0.4, 0.4, 5), Err(Error::DegenerateDesign { .. })));
    }

    #[test]
    fn csv_round_trip_and_weight_check() {
        let z: Vec<f64> = (1..=20).map(|k| k as f64).collect();
        let s = draw_pps_sample(&frame_from_z(&z), 5, 3).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = SampleData::read_csv(buf.as_slice(), Some(20.0)).unwrap();
        assert_eq!(back, s);

        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("unit_id,y,x1,v1,pi,w,z\n"));
        let mut rows: Vec<String> = text.lines().map(String::from).collect();
        let mut cells: Vec<String> = rows[1].split(',').map(String::from).collect();
        cells[5] = "123.0".into();
        rows[1] = cells.join(",");
        let err = SampleData::read_csv(rows.join("\n").as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn population_size_defaults_to_weight_total() {
        let csv = "unit_id,y,v1,pi,w\n0,1.0,2.0,0.5,2\n1,2.0,1.0,0.25,4\n";
        let s = SampleData::read_csv(csv.as_bytes(), None).unwrap();
        assert_eq!(s.population_size, 6.0);
        assert_eq!(s.x.ncols(), 0);
        assert!(s.z.is_none());
    }
}
