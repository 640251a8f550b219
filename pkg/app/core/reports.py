"""CSV artifacts and key=value report files"""
from pathlib import Path

import numpy as np
import pandas as pd

FLOAT_FORMAT = '%.17g'


def _format(value):
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % value
    return str(value)


def write_report(values, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f'{key}={_format(value)}' for key, value in values.items()]
    path.write_text('\n'.join(lines) + '\n')
    return path


def read_report(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if '=' in line:
            key, value = line.split('=', 1)
            out[key.strip()] = value.strip()
    return out


def write_csv(frame, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def vector_columns(prefix, values):
    """{'prefix0': ..., 'prefix1': ...} for a (T, n) array"""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return {f'{prefix}{j}': arr[:, j] for j in range(arr.shape[1])}


def trajectory_frame(traj, residual_norms):
    table = {'t': traj.times}
    for prefix, values in (('z', traj.z_path), ('x', traj.x_path),
                           ('y', traj.y_path), ('u', traj.u_path),
                           ('v', traj.v_path)):
        table.update(vector_columns(prefix, values))
    table['residual_norm'] = residual_norms
    return pd.DataFrame(table)


def ep_frame(result, policy_values):
    """Rows j, i with V^j_i, the matching h value and their gap.

    `policy_values[n]` holds h_n at every point of the path.
    """
    rows = []
    n_v = result.V.shape[2]
    for j in range(1, len(result.V) + 1):
        for i in range(result.config.horizon + 1):
            order = result.target_order(j, i)
            V = result.V[j - 1, i]
            h = policy_values[order][i]
            row = {'j': j, 'i': i}
            if n_v == 1:
                row.update(V=V[0], h=h[0])
            else:
                row.update({f'V{c}': V[c] for c in range(n_v)})
                row.update({f'h{c}': h[c] for c in range(n_v)})
            row['gap'] = float(np.linalg.norm(V - h))
            row['order'] = order
            rows.append(row)
    return pd.DataFrame(rows)
