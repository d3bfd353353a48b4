"""Inter-county spatial graph: great-circle distances, kNN adjacency,
symmetric normalization, and connectivity diagnostics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

EARTH_RADIUS_KM = 6371.0


class GraphError(ValueError):
    pass


@dataclass
class CentroidTable:
    names: list[str]
    lat: np.ndarray
    lon: np.ndarray

    def __post_init__(self) -> None:
        if np.any(np.abs(self.lat) > 90.0) or np.any(np.abs(self.lon) > 180.0):
            raise GraphError("centroid coordinates out of range")
        if len(self.names) != len(set(self.names)):
            raise GraphError("duplicate county names in centroid table")


@dataclass
class SpatialGraph:
    names: list[str]
    lat: np.ndarray
    lon: np.ndarray
    distances: np.ndarray      # (N, N) km, symmetric, zero diagonal
    adjacency: np.ndarray      # (N, N) 0/1, symmetric, zero diagonal
    edge_index: np.ndarray     # (2, E) directed pairs, lexicographic
    normalized: np.ndarray     # D^-1/2 (A+I) D^-1/2
    k: int

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(int)


def haversine(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in km between (lat, lon) points in degrees."""
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    dphi = lat2 - lat1
    dlmb = lon2 - lon1
    h = math.sin(dphi / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def distance_matrix(table: CentroidTable) -> np.ndarray:
    n = len(table.names)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = haversine((table.lat[i], table.lon[i]), (table.lat[j], table.lon[j]))
            out[i, j] = out[j, i] = d
    return out


def load_centroids(path=None) -> CentroidTable:
    """Read `county,lat,lon` CSV; defaults to the packaged 26-county table."""
    if path is None:
        with resources.files("herdcast.data").joinpath("centroids.csv").open("r") as fh:
            return _parse_centroids(fh)
    with open(path, newline="", encoding="utf-8") as fh:
        return _parse_centroids(fh)


def _parse_centroids(fh) -> CentroidTable:
    reader = csv.DictReader(fh)
    names, lat, lon = [], [], []
    for row in reader:
        names.append(row["county"].strip())
        lat.append(float(row["lat"]))
        lon.append(float(row["lon"]))
    if not names:
        raise GraphError("centroid table is empty")
    order = np.argsort(names)
    return CentroidTable(
        names=[names[i] for i in order],
        lat=np.asarray(lat)[order],
        lon=np.asarray(lon)[order],
    )


def knn_graph(centroids: CentroidTable, k: int = 3) -> SpatialGraph:
    """Symmetrized k-nearest-neighbour graph over geodesic distance.

    Distance ties break toward the lower county index so the construction is
    reproducible across platforms.
    """
    n = len(centroids.names)
    if n < k + 1:
        raise GraphError(f"need at least {k + 1} counties for k={k}, got {n}")
    dist = distance_matrix(centroids)
    adjacency = np.zeros((n, n))
    for i in range(n):
        others = [j for j in range(n) if j != i]
        others.sort(key=lambda j: (dist[i, j], j))
        for j in others[:k]:
            adjacency[i, j] = 1.0
            adjacency[j, i] = 1.0
    edges = sorted((i, j) for i in range(n) for j in range(n) if adjacency[i, j] > 0)
    edge_index = np.array(edges, dtype=int).T if edges else np.zeros((2, 0), dtype=int)
    return SpatialGraph(
        names=list(centroids.names),
        lat=np.asarray(centroids.lat, dtype=float),
        lon=np.asarray(centroids.lon, dtype=float),
        distances=dist,
        adjacency=adjacency,
        edge_index=edge_index,
        normalized=normalize_adjacency(adjacency),
        k=k,
    )


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Symmetric normalization with self-loops: D^-1/2 (A+I) D^-1/2.

    Computed as a_ij / sqrt(d_i * d_j), one square root per entry, which is
    exact for perfect-square degree products (e.g. the two-node graph).
    """
    a_hat = adjacency + np.eye(adjacency.shape[0])
    degrees = a_hat.sum(axis=1)
    return a_hat / np.sqrt(np.outer(degrees, degrees))


def connectivity_report(graph: SpatialGraph) -> dict:
    """Component count (breadth-first), per-node degree, and the neighbour
    margin d^(k+1) - d^(k) that guards each node's neighbour set against
    centroid perturbation."""
    n = len(graph.names)
    seen = np.zeros(n, dtype=bool)
    components = 0
    for start in range(n):
        if seen[start]:
            continue
        components += 1
        queue = [start]
        seen[start] = True
        while queue:
            node = queue.pop(0)
            for nxt in np.flatnonzero(graph.adjacency[node]):
                if not seen[nxt]:
                    seen[nxt] = True
                    queue.append(int(nxt))
    margins = np.zeros(n)
    for i in range(n):
        others = np.sort(np.delete(graph.distances[i], i))
        if graph.k < others.size:
            margins[i] = others[graph.k] - others[graph.k - 1]
    return {
        "components": components,
        "degrees": graph.degrees.tolist(),
        "margins": margins.tolist(),
    }


def rebuild_adjacency(edge_index: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, n))
    for i, j in edge_index.T:
        out[i, j] = 1.0
    return out


def export_edge_list_csv(graph: SpatialGraph, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "target", "distance_km"])
        for i, j in graph.edge_index.T:
            writer.writerow([graph.names[i], graph.names[j], repr(float(graph.distances[i, j]))])


def graph_to_json_dict(graph: SpatialGraph) -> dict:
    return {
        "names": graph.names,
        "lat": graph.lat.tolist(),
        "lon": graph.lon.tolist(),
        "k": graph.k,
        "adjacency": graph.adjacency.tolist(),
        "edge_index": graph.edge_index.tolist(),
        "normalized": graph.normalized.tolist(),
        "distances": graph.distances.tolist(),
    }


def graph_from_json_dict(doc: dict) -> SpatialGraph:
    return SpatialGraph(
        names=list(doc["names"]),
        lat=np.asarray(doc["lat"]),
        lon=np.asarray(doc["lon"]),
        distances=np.asarray(doc["distances"]),
        adjacency=np.asarray(doc["adjacency"]),
        edge_index=np.asarray(doc["edge_index"], dtype=int).reshape(2, -1),
        normalized=np.asarray(doc["normalized"]),
        k=int(doc["k"]),
    )


def save_graph_json(graph: SpatialGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_json_dict(graph), fh, sort_keys=True)
