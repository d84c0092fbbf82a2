"""
Closing the loop: a policy from a Lyapunov function
====================================================

The pipeline runner tabulates the Lyapunov function of the noisy 1-D chain on
a grid. Choosing, at each state, the action that most often makes that
function drop gives a new policy. We check that it reaches the inflated goal
within the time bound the sandwich functions predict, then certify it.
"""

from convlyap.certify import fit_batch, uniform_envelope
from convlyap.chain import simulate_batch
from convlyap.cli import Run, load_bundled, resolve_config

run = Run(resolve_config(load_bundled("noisy_1d.json")))
policy = run.policy()

for s in ([-3.0], [0.8], [2.0]):
    d = policy.decide(s)
    print(f"s={s[0]:+.1f}  action={d.action[0]:+.2f}  P(decay)={d.probabilities[d.index]:.2f}")

# %%
for row in run.reaching_report()["rows"]:
    print(f"from {row['state']}: T_L={row['T_L']:.1f}, reached in {row['steps']} steps "
          f"with frequency {row['frequency']:.3f} -> {row['verdict']}")

# %%
# The synthesized policy gets its own certificate.
e = run.exp
batch = simulate_batch(e.model, policy, e.goal, [3.0], 30, 150, seed=9)
cert = uniform_envelope(fit_batch(batch), eta=0.04, eta_prime=0.01)
print("original eta:", run.certificate().eta, " synthesized policy:", cert.verdict, cert.theta)
