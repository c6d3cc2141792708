//! Built-in acceptance suites, one per acceptance criterion.

pub struct Suite {
    pub id: &'static str,
    pub title: &'static str,
    pub config: &'static str,
}

macro_rules! periodic3 {
    () => {
        r#"
[environment]
driver = "periodic"
laws = [
  { offsets = [1, 2, -1], probs = [0.6, 0.2, 0.2] },
  { offsets = [1, -1], probs = [0.4, 0.6] },
  { offsets = [1, 2, -1], probs = [0.3, 0.4, 0.3] },
]
"#
    };
}

macro_rules! mixed {
    () => {
        r#"
[environment]
driver = "iid"
laws = [{ offsets = [1, 2, -1], probs = [0.5, 0.3, 0.2] }]
"#
    };
}

macro_rules! cylinder {
    () => {
        r#"
[tube]
driver = "periodic"
radii = [1.0]
r_min = 1.0
m_hat = 1.0
"#
    };
}

macro_rules! random_tube {
    () => {
        r#"
[tube]
driver = "markov"
transition = [[0.2, 0.8], [0.8, 0.2]]
radii = [1.0, 1.5]
r_min = 1.0
m_hat = 1.5
"#
    };
}

macro_rules! suite {
    ($id:literal, $title:literal, $head:literal $(, $tail:expr)*) => {
        Suite { id: $id, title: $title, config: concat!($head $(, $tail)*) }
    };
}

pub static SUITES: &[Suite] = &[
    suite!(
        "c01-homogeneous-speed",
        "homogeneous RWRE speed equals p - q",
        "kind = \"rwre_speed\"\nseed = 1\nrho = [\"inf\"]\nreplicas = 32\nsteps = 1000000\n\n[expect]\nv = 0.2\nv_tol = 0.005\n\n[environment]\ndriver = \"iid\"\nlaws = [{ offsets = [1, -1], probs = [0.6, 0.4] }]\n"
    ),
    suite!(
        "c02-periodic-speed-oracle",
        "periodic speed matches the phase-chain oracle",
        "kind = \"rwre_speed\"\nseed = 2\nrho = [4]\nreplicas = 16\nsteps = 1000000\n\n[expect]\nrel_tol = 0.01\n",
        periodic3!()
    ),
    suite!(
        "c03-exact-hit-oracle",
        "exact-hit frequency matches the linear-solve bracket",
        "kind = \"oracle_check\"\nseed = 3\nrho = [\"inf\"]\nx0 = -1\nz = 0\nwindow = 40\nsamples = 100000\n\n[environment]\ndriver = \"iid\"\nlaws = [{ offsets = [1, 2], probs = [0.5, 0.5] }]\n"
    ),
    suite!(
        "c04-cycle-vs-direct-speed",
        "cycle speed formula agrees with the direct speed",
        "kind = \"rwre_regen\"\nseed = 4\nrho = [8]\nreplicas = 16\ncycles = 5000\nsteps = 1000000\n\n[expect]\nrel_tol = 0.02\n",
        mixed!()
    ),
    suite!(
        "c05-cycle-duration-scaling",
        "E T / rho stays in a fixed bracket at a common eps1",
        "kind = \"rwre_regen\"\nseed = 5\nrho = [4, 8, 16]\nreplicas = 8\ncycles = 2000\nsteps = 200000\n\n[expect]\nscaling_ratio = 4.0\nrel_tol = 0.05\n",
        mixed!()
    ),
    suite!(
        "c06-invariant-measure",
        "cycle occupation and direct occupation match the oracle Q",
        "kind = \"rwre_Q\"\nseed = 6\nrho = [6]\nreplicas = 16\ncycles = 2000\nsteps = 100000\n\n[expect]\ntv = 0.02\n",
        periodic3!()
    ),
    suite!(
        "c07-rn-density",
        "Radon-Nikodym ratios are bounded and stable in rho",
        "kind = \"rwre_Q\"\nseed = 7\nrho = [8, 16]\nreplicas = 16\ncycles = 2000\nsteps = 100000\n\n[expect]\nrn_change = 0.1\ntv = 0.02\n\n[environment]\ndriver = \"markov\"\ntransition = [[0.7, 0.3], [0.4, 0.6]]\nlaws = [\n  { offsets = [1, 2, -1, 9], probs = [0.5, 0.2, 0.25, 0.05] },\n  { offsets = [1, 2, -1], probs = [0.4, 0.1, 0.5] },\n]\n"
    ),
    suite!(
        "c08-truncation-convergence",
        "v_rho approaches v_inf with nonincreasing gaps",
        "kind = \"rwre_speed\"\nseed = 8\nrho = [4, 8, 16, \"inf\"]\nreplicas = 32\nsteps = 200000\n\n[expect]\ngap = 0.01\n\n[environment]\ndriver = \"iid\"\nlaws = [{ power_tail = { back = 0.3, alpha = 2.5, max_jump = 64 } }]\n"
    ),
    suite!(
        "c09-cosine-sampler",
        "cosine-law directions have t = w.n with density 2t",
        "kind = \"oracle_check\"\nseed = 9\nsamples = 100000\n",
        cylinder!()
    ),
    suite!(
        "c10-driftless-billiard",
        "driftless billiard has zero speed",
        "kind = \"billiard_lln\"\nseed = 10\nreplicas = 16\nsteps = 1000000\n\n[billiard]\nlambda = 0.0\n\n[expect]\nmax_stderr = 0.002\n",
        cylinder!()
    ),
    suite!(
        "c11-drifted-billiard",
        "drifted billiard has a positive speed that does not depend on the tube realization",
        "kind = \"billiard_lln\"\nseed = 11\ntube_seeds = [111, 222]\nreplicas = 16\nsteps = 1000000\n\n[billiard]\nlambda = 1.0\n",
        random_tube!()
    ),
    suite!(
        "c12-reversibility",
        "one-step fluxes between bands balance under the lambda-weighted measure",
        "kind = \"billiard_balance\"\nseed = 12\nlambdas = [0.25, 1.0]\nbands = [[0, 1], [0, 3]]\nsamples = 100000\n\n[billiard]\nlambda = 1.0\n",
        cylinder!()
    ),
    suite!(
        "c13-exit-time-tails",
        "exit-time survival decays geometrically",
        "kind = \"billiard_tails\"\nseed = 13\ninterval = [0.0, 4.0]\nstart = 2.0\nsamples = 10000\nreplicas = 8\nsteps = 100000\n\n[billiard]\nlambda = 1.0\n",
        cylinder!()
    ),
    suite!(
        "c14-long-jump-tails",
        "chord and skeleton increment tails decay like h^-2 or faster (fitted exponent >= 1.8)",
        "kind = \"skeleton\"\nseed = 14\nreplicas = 8\nsteps = 250000\n\n[billiard]\nlambda = 1.0\nl_block = 1\n",
        cylinder!()
    ),
    suite!(
        "c15-hard-invariants",
        "billiard invariants on a random tube at strong drift",
        "kind = \"billiard_lln\"\nseed = 15\ntube_seeds = [1, 2, 3]\nreplicas = 8\nsteps = 100000\n\n[billiard]\nlambda = 4.0\n\n[expect]\nsigmas = 4.0\n",
        random_tube!()
    ),
];

pub fn find(id: &str) -> Option<&'static Suite> {
    SUITES.iter().find(|s| s.id == id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse;

    #[test]
    fn every_suite_validates() {
        assert!(SUITES.len() >= 10);
        for s in SUITES {
            let cfg = parse(s.config).unwrap_or_else(|e| panic!("{}: {e}", s.id));
            assert!(cfg.validate().is_empty(), "{}: {:?}", s.id, cfg.validate());
        }
    }

    #[test]
    fn ids_are_unique() {
        let mut ids: Vec<_> = SUITES.iter().map(|s| s.id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), SUITES.len());
    }
}
