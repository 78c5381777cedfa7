use super::Grid;
use crate::error::{Error, Result};

/// Loss value together with its gradient w.r.t. the prediction.
#[derive(Clone, Debug)]
pub struct Loss {
    pub value: f64,
    pub grad: Grid,
}

fn check_shapes(op: &'static str, pred: &Grid, target: &Grid) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            op,
            format!("{}x{}", pred.height(), pred.width()),
            format!("{}x{}", target.height(), target.width()),
        ));
    }
    Ok(())
}

/// Mean squared error over all pixels.
pub fn mse_loss(pred: &Grid, target: &Grid) -> Result<Loss> {
    check_shapes("mse_loss", pred, target)?;
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.values().iter().zip(target.values()) {
        let d = p - t;
        sum += d * d;
        grad.push(2.0 * d / n);
    }
    Ok(Loss {
        value: sum / n,
        grad: Grid::new(pred.height(), pred.width(), grad)?,
    })
}

/// Mean absolute error; the subgradient is 0 where prediction equals target.
pub fn l1_loss(pred: &Grid, target: &Grid) -> Result<Loss> {
    check_shapes("l1_loss", pred, target)?;
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.values().iter().zip(target.values()) {
        let d = p - t;
        sum += d.abs();
        let s = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad.push(s / n);
    }
    Ok(Loss {
        value: sum / n,
        grad: Grid::new(pred.height(), pred.width(), grad)?,
    })
}
