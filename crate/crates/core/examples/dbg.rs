use resteal::chain::*;
use resteal::mdp::*;
use resteal::sysmodel::*;

fn main() {
    let model = benchmark_model();
    let steady = solve_steady_covariance(&model, STEADY_TOL, STEADY_MAX_ITER).unwrap();
    let mut traces = RiccatiTraces::new(&model, &steady.p_bar);
    let chan = ChannelParams::new(0.6, 0.95, 0.6).unwrap();
    let n_t = 12;
    let (alpha, b1, b2) = (0.2, 0.99, 0.5);
    let mut lp = AttackLp::new(&mut traces, &chan, n_t, &StealthBudget::new(0.05)).unwrap();
    let costs = adversary_cost_vector(&mut traces, &chan, n_t, 1e-9).unwrap();
    for th in 0..=10usize {
        let reference = ReferencePolicy::threshold(th);
        let omega = reference_occupation(&reference, &chan, n_t).unwrap();
        let j_u_hat = costs.estimator_cost(&omega);
        let j_e_hat = costs.adversary_cost(&omega);
        match lp.solve_for(&reference) {
            Ok(sol) => {
                let j_c = alpha * (b1 * j_u_hat - (1.0 - b1) * j_e_hat)
                    + (1.0 - alpha) * (b2 * sol.j_u - (1.0 - b2) * sol.j_e);
                println!("th={th:2}: Ju^={j_u_hat:9.3} Je^={j_e_hat:12.3} Ju={:9.3} Je={:9.3} -> J_c={j_c:10.3}", sol.j_u, sol.j_e);
            }
            Err(e) => println!("th={th:2}: Ju^={j_u_hat:9.3} Je^={j_e_hat:12.3} ERR {e}"),
        }
    }
}
