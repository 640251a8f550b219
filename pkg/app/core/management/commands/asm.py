"""
Django command running the stable-manifold solver in batch mode
"""
import logging
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management.base import BaseCommand, CommandError

from core.config import build_model, load_run_config
from core.exceptions import AsmError, ConfigError
from core.growth import GrowthParams, policy_grid, policy_table
from core.manifold import (
    DomainSpec,
    FirstIterate,
    PolicyApprox,
    check_conditions,
    error_bound,
    search_verified_domain,
)
from core.pipeline import build_pipeline
from core.reports import (
    ep_frame,
    trajectory_frame,
    write_csv,
    write_report,
)
from core.solver import (
    EPConfig,
    exogenous_path,
    path_residuals,
    simulate,
    simulate_stochastic,
    solve_ep,
    solve_initial,
)

logger = logging.getLogger(__name__)

THETA = 0.01
# default exogenous start for ep, as a share of the verified radius
EP_START = 0.5
ACTIONS = ('check', 'policy', 'simulate', 'ep')


class Command(BaseCommand):
    """Django command for the stable-manifold solver"""
    help = 'Check conditions, tabulate policies, simulate or run EP'

    def add_arguments(self, parser):
        sub = parser.add_subparsers(dest='action', required=True)
        for action in ACTIONS:
            child = sub.add_parser(action)
            child.add_argument('--config', default=None)
            child.add_argument('--order', type=int, default=None)
            child.add_argument('--out', default=None)
            child.add_argument('--grid', type=int, default=None)
            child.add_argument('--seed', type=int, default=None)

    def handle(self, *args, **options):
        """Entrypoint for command"""
        action = options['action']
        try:
            config = load_run_config(
                options.get('config'),
                order=options.get('order'),
                output_dir=options.get('out'),
                grid=options.get('grid'),
                seed=options.get('seed'),
            )
            model, normalize = build_model(config)
            pipe = build_pipeline(model, config.steady_tol,
                                  normalize=normalize)
            path = getattr(self, f'run_{action}')(config, pipe)
        except AsmError as exc:
            logger.debug('asm %s failed', action, exc_info=True)
            raise CommandError(str(exc), returncode=exc.exit_code)
        self.stdout.write(self.style.SUCCESS(f'{action}: wrote {path}'))

    def _out(self, config, name):
        return Path(config.output_dir) / name

    def _policy(self, config, pipe, order=None, domain=None):
        return PolicyApprox(
            config.order if order is None else order,
            pipe.system,
            inner_tol=config.inner_tol,
            inner_max_iter=config.inner_max_iter,
            domain=domain,
            inner_solver=config.inner_solver,
        )

    def _domain(self, config, pipe):
        if config.radii is None:
            return search_verified_domain(pipe.system, config.radius_grid,
                                          config.sample_count)
        dom = DomainSpec(config.radii[0], config.radii[1],
                         config.sample_count)
        return dom, check_conditions(pipe.system, dom)

    def run_check(self, config, pipe):
        dom, report = self._domain(config, pipe)
        values = {'model': pipe.model.name}
        values.update(report.as_dict())
        if report.cond2_ok:
            bound = error_bound(pipe.split, report, max(config.order, 1))
            values.update(
                a=bound.a,
                apriori=bound.apriori,
                s1_star=bound.s1_star,
                s2_star=bound.s2_star,
                deriv_bound=bound.deriv_bound,
                corollary_rate=bound.corollary_rate(THETA),
            )
        else:
            self.stdout.write('Condition 2 fails, no error bound reported')
        return write_report(values, self._out(config, 'check.txt'))

    def run_policy(self, config, pipe):
        if pipe.model.name == 'growth':
            params = GrowthParams.from_dict(config.params)
            frame = policy_table(params, pipe.system,
                                 policy_grid(params, config.grid))
        else:
            frame = self._policy_on_u_grid(config, pipe)
        failed = int(frame.isna().sum().sum())
        if failed:
            logger.warning('%d policy entries could not be evaluated',
                           failed)
        return write_csv(frame, self._out(config, 'policy.csv'))

    def _policy_on_u_grid(self, config, pipe):
        dom, _ = self._domain(config, pipe)
        system = pipe.system
        u = np.zeros((config.grid, system.n_u))
        u[:, 0] = np.linspace(-dom.r_u, dom.r_u, config.grid)
        table = {'u': u[:, 0]}
        policies = [('h11', FirstIterate(system))] + [
            (f'h{n}', self._policy(config, pipe, order=n)) for n in (1, 2, 3)
        ]
        for name, policy in policies:
            values = np.atleast_2d(policy.evaluate(u, strict=False))
            if system.n_v == 1:
                table[name] = values[:, 0]
            else:
                for c in range(system.n_v):
                    table[f'{name}_{c}'] = values[:, c]
        return pd.DataFrame(table)

    def run_simulate(self, config, pipe):
        model, ss, split = pipe.model, pipe.ss, pipe.split
        domain = self._domain(config, pipe)[0] if config.truncate else None
        p = self._policy(config, pipe, domain=domain)
        x0 = np.asarray(config.x0 if config.x0 is not None
                        else ss.x_bar * config.x0_scale, dtype=float)
        z0 = np.asarray(config.z0 if config.z0 is not None
                        else np.zeros(model.n_z), dtype=float)
        if config.stochastic:
            if model.n_z == 0:
                raise ConfigError('stochastic simulation needs an '
                                  'exogenous state')
            rng = np.random.default_rng(config.seed)
            shocks = config.shock_scale * rng.standard_normal(
                (config.T, model.n_z))
            traj = simulate_stochastic(p, split, x0, z0, shocks, config.T)
        else:
            u0 = solve_initial(p, split, x0, z0, tol=config.init_tol)
            traj = simulate(p, split, u0, config.T,
                            r_u=domain.r_u if domain else None)
        frame = trajectory_frame(traj, path_residuals(model, traj))
        return write_csv(frame, self._out(config, 'simulate.csv'))

    def _ep_start(self, config, pipe):
        """z0 from the config, else a point at half the verified radius"""
        if config.z0 is not None:
            return np.asarray(config.z0, dtype=float)
        if pipe.model.n_z == 0:
            return np.zeros(0)
        dom, _ = self._domain(config, pipe)
        n_z = pipe.model.n_z
        return np.full(n_z, EP_START * dom.r_u / np.sqrt(n_z))

    def run_ep(self, config, pipe):
        ss, system = pipe.ss, pipe.system
        x0 = np.asarray(config.x0 if config.x0 is not None
                        else ss.x_bar * config.x0_scale, dtype=float)
        z0 = self._ep_start(config, pipe)
        u0 = solve_initial(self._policy(config, pipe, order=1), pipe.split,
                           x0, z0, tol=config.init_tol)
        u_path = exogenous_path(system, u0, config.horizon)
        ep_config = EPConfig(config.horizon, config.type2_iters,
                             tol=config.inner_tol,
                             max_iter=config.inner_max_iter)
        result = solve_ep(system, u_path, ep_config)
        policy_values = {
            n: np.atleast_2d(self._policy(config, pipe, order=n)
                             .evaluate(result.u_path))
            for n in range(1, config.type2_iters + 1)
        }
        frame = ep_frame(result, policy_values)
        return write_csv(frame, self._out(config, 'ep.csv'))
