use super::PorosityField;

/// Classical (Matheron) semivariance along the two lateral axes:
/// γ(h) = Σ (z(x) − z(x+h))² / (2 N(h)) over all x- and y-aligned pairs at lag `h`.
pub fn empirical_variogram(field: &PorosityField, lags: &[usize]) -> Vec<(usize, f64)> {
    let d = field.dims();
    let v = field.values();
    lags.iter()
        .map(|&h| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for k in 0..d.nz {
                for j in 0..d.ny {
                    for i in 0..d.nx {
                        let a = v[d.index(i, j, k)];
                        if i + h < d.nx {
                            sum += (a - v[d.index(i + h, j, k)]).powi(2);
                            count += 1;
                        }
                        if j + h < d.ny {
                            sum += (a - v[d.index(i, j + h, k)]).powi(2);
                            count += 1;
                        }
                    }
                }
            }
            let gamma = if count == 0 { 0.0 } else { sum / (2.0 * count as f64) };
            (h, gamma)
        })
        .collect()
}
