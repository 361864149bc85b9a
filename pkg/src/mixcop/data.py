"""Long-format container for repeated count measurements.

A dataset is a flat table with one row per (subject, visit): a subject
label, an observation time, a non-negative integer count and a design row.
Rows are normalized at construction so that each subject occupies a
contiguous block ordered by time, which is what the pairwise-likelihood
code expects.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = ["LongitudinalDataset"]


@dataclass
class LongitudinalDataset:
    """Repeated counts with covariates, one row per observation.

    Attributes
    ----------
    subject_ids : array of shape (n_obs,)
        Subject label for each row (any hashable values).
    times : float array of shape (n_obs,)
        Observation times; drive the serial-dependence structure.
    y : int array of shape (n_obs,)
        Non-negative counts.
    X : float array of shape (n_obs, p)
        Full design matrix including the intercept column.
    covariate_names : list of str
        Column names of ``X``.
    """

    subject_ids: np.ndarray
    times: np.ndarray
    y: np.ndarray
    X: np.ndarray
    covariate_names: list = field(default_factory=list)

    def __post_init__(self):
        self.subject_ids = np.asarray(self.subject_ids)
        self.times = np.asarray(self.times, dtype=float)
        self.y = np.asarray(self.y)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        n = self.subject_ids.shape[0]
        if not (self.times.shape[0] == self.y.shape[0] == self.X.shape[0] == n):
            raise ValueError("subject_ids, times, y and X must have equal length")
        if n == 0:
            raise ValueError("dataset is empty")
        if not np.all(np.isfinite(self.times)):
            raise ValueError("times must be finite")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("covariates must be finite")
        yf = np.asarray(self.y, dtype=float)
        if np.any(yf < 0) or np.any(yf != np.floor(yf)):
            raise ValueError("counts must be non-negative integers")
        self.y = yf.astype(np.int64)
        if not self.covariate_names:
            self.covariate_names = [f"x{j}" for j in range(self.X.shape[1])]
        if len(self.covariate_names) != self.X.shape[1]:
            raise ValueError("covariate_names does not match the design width")

        # normalize: contiguous subject blocks (order of first appearance),
        # rows within a block sorted by time
        _, first = np.unique(self.subject_ids, return_index=True)
        labels = self.subject_ids[np.sort(first)]
        rank = {lab: i for i, lab in enumerate(labels.tolist())}
        subj_rank = np.array([rank[s] for s in self.subject_ids.tolist()])
        order = np.lexsort((self.times, subj_rank))
        self.subject_ids = self.subject_ids[order]
        self.times = self.times[order]
        self.y = self.y[order]
        self.X = self.X[order]

        edges = np.flatnonzero(np.r_[True, self.subject_ids[1:] != self.subject_ids[:-1], True])
        self._slices = [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]

    @property
    def n_obs(self):
        return self.y.shape[0]

    @property
    def n_subjects(self):
        return len(self._slices)

    @property
    def n_covariates(self):
        return self.X.shape[1]

    def subject_slices(self):
        """Row slices of the contiguous per-subject blocks."""
        return list(self._slices)

    def subject_lengths(self):
        return np.array([s.stop - s.start for s in self._slices])

    @classmethod
    def from_csv(cls, path, include_time_covariate=False):
        """Read a long-format CSV with columns subject,time,y,<covariates...>.

        An intercept column is prepended to the design; with
        ``include_time_covariate`` the observation time is also appended as
        a regressor (after the file's own covariate columns).
        """
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            # tolerate leading comment lines (e.g. the schema_version header)
            while header is not None and header and header[0].lstrip().startswith("#"):
                header = next(reader, None)
            if header is None:
                raise ValueError(f"{path}: empty file")
            header = [h.strip() for h in header]
            required = ["subject", "time", "y"]
            if [h.lower() for h in header[:3]] != required:
                raise ValueError(
                    f"{path}: expected leading columns subject,time,y; got {header[:3]}"
                )
            extra = header[3:]
            rows = [r for r in reader if r]
        if not rows:
            raise ValueError(f"{path}: no data rows")
        subj = np.array([r[0] for r in rows])
        try:
            times = np.array([float(r[1]) for r in rows])
            y = np.array([float(r[2]) for r in rows])
            Z = np.array([[float(v) for v in r[3:]] for r in rows]) if extra else np.empty((len(rows), 0))
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}: malformed numeric field ({exc})") from exc
        cols = [np.ones(len(rows))]
        names = ["intercept"]
        for j, name in enumerate(extra):
            cols.append(Z[:, j])
            names.append(name)
        if include_time_covariate:
            cols.append(times)
            names.append("time")
        X = np.column_stack(cols)
        return cls(subj, times, y, X, covariate_names=names)

    def to_csv(self, path):
        """Write the dataset back out.

        The intercept and any time-derived design column are dropped (they
        are reconstructed by `from_csv`), so a round trip with the same
        ``include_time_covariate`` flag reproduces the design exactly.
        """
        keep = [j for j, n in enumerate(self.covariate_names) if n not in ("intercept", "time")]
        with open(path, "w", newline="") as fh:
            fh.write("# schema_version: 1\n")
            writer = csv.writer(fh)
            writer.writerow(["subject", "time", "y"] + [self.covariate_names[j] for j in keep])
            for i in range(self.n_obs):
                writer.writerow(
                    [self.subject_ids[i], repr(float(self.times[i])), int(self.y[i])]
                    + [repr(float(self.X[i, j])) for j in keep]
                )
