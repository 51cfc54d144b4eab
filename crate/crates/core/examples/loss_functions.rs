//! Evaluates the BCE, Dice, focal and hybrid losses on a toy prediction
//! and checks the analytic gradient against a finite difference.

use polypseg::losses::{bce_loss, dice_loss, focal_loss, hybrid_gradient, hybrid_loss, LossWeights};

fn main() -> polypseg::Result<()> {
    let target = [1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
    let pred = [0.9, 0.6, 0.2, 0.4, 0.7, 0.1];
    let w = LossWeights::default();
    println!("bce    {:.5}", bce_loss(&pred, &target, w.epsilon)?);
    println!("dice   {:.5}", dice_loss(&pred, &target, w.epsilon)?);
    println!("focal  {:.5}", focal_loss(&pred, &target, w.focal_gamma, w.focal_alpha, w.epsilon)?);
    println!("hybrid {:.5}", hybrid_loss(&pred, &target, &w)?);

    let grad = hybrid_gradient(&pred, &target, &w)?;
    let h = 1e-6;
    let mut up = pred;
    up[1] += h;
    let fd = (hybrid_loss(&up, &target, &w)? - hybrid_loss(&pred, &target, &w)?) / h;
    println!("d/dp[1]: analytic {:.6}, forward difference {:.6}", grad[1], fd);
    Ok(())
}
