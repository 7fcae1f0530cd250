"""Generate the bundled desk-scale fixtures.

Run from the repository root:  python3 tools/make_fixtures.py
"""

import json
from pathlib import Path

FIXDIR = Path(__file__).resolve().parents[1] / "src" / "coplan" / "fixtures"

TOY6 = {
    "schema_version": 1,
    "name": "toy6",
    "nodes": [
        {"id": 1, "kind": "root", "fictitious_demand": 0.0},
        {"id": 2, "kind": "load", "fictitious_demand": 1.0},
        {"id": 3, "kind": "load", "fictitious_demand": 1.0},
        {"id": 4, "kind": "load", "fictitious_demand": 1.0},
        {"id": 5, "kind": "load", "fictitious_demand": 1.0},
        {"id": 6, "kind": "load", "fictitious_demand": 1.0},
    ],
    "candidate_lines": [
        {"i": 1, "j": 2, "length_km": 1.2, "r": 6.0e-06, "x": 1.2e-05, "capacity_kw": 4000.0, "unit_cost": 23.30},
        {"i": 1, "j": 3, "length_km": 1.6, "r": 8.0e-06, "x": 1.6e-05, "capacity_kw": 4000.0, "unit_cost": 23.30},
        {"i": 2, "j": 3, "length_km": 1.0, "r": 5.0e-06, "x": 1.0e-05, "capacity_kw": 3200.0, "unit_cost": 23.30},
        {"i": 2, "j": 4, "length_km": 1.4, "r": 7.0e-06, "x": 1.4e-05, "capacity_kw": 3200.0, "unit_cost": 23.30},
        {"i": 3, "j": 5, "length_km": 1.1, "r": 5.5e-06, "x": 1.1e-05, "capacity_kw": 3200.0, "unit_cost": 23.30},
        {"i": 4, "j": 5, "length_km": 1.3, "r": 6.5e-06, "x": 1.3e-05, "capacity_kw": 3200.0, "unit_cost": 23.30},
        {"i": 5, "j": 6, "length_km": 0.9, "r": 4.5e-06, "x": 0.9e-05, "capacity_kw": 2500.0, "unit_cost": 23.30},
    ],
    "hubs": [
        {"id": 1, "node": 2, "cost": 180.00, "pop_weight": 0.35,
         "cost_components": [[108.0, 20], [72.0, 30]], "n_min": 0, "n_max": None},
        {"id": 2, "node": 3, "cost": 194.50, "pop_weight": 0.15,
         "cost_components": [[120.0, 20], [74.5, 30]], "n_min": 0, "n_max": None},
        {"id": 3, "node": 4, "cost": 210.00, "pop_weight": 0.20,
         "cost_components": [[126.0, 20], [84.0, 30]], "n_min": 0, "n_max": None},
        {"id": 4, "node": 5, "cost": 190.00, "pop_weight": 0.20,
         "cost_components": [[114.0, 20], [76.0, 30]], "n_min": 0, "n_max": None},
        {"id": 5, "node": 6, "cost": 205.00, "pop_weight": 0.10,
         "cost_components": [[123.0, 20], [82.0, 30]], "n_min": 0, "n_max": None},
    ],
    "hub_edges": [
        [1, 2, 2.0], [2, 3, 1.5], [3, 4, 2.5], [4, 5, 1.0], [1, 3, 3.0], [2, 4, 3.5],
    ],
    "rcs_min_count": 2,
    "rcs_type": "pv-ev",
    "ev": {
        "consumption_wh_per_km": 115.0,
        "travel_cost_factor": 5.0e-05,
        "p_min_kw": 0.0,
        "p_max_kw": 7.0,
        "e_min_kwh": 10.0,
        "e_max_kwh": 60.0,
        "charge_window": [1, 2],
    },
    "fleet": {"v_min": 10, "v_max": 10},
    "tou_prices": [2.5e-05, 6.5e-05, 1.11e-04, 6.5e-05],
    "diu_box": {
        "p_load": {
            "2": [[400, 400], [500, 500], [600, 640], [500, 500]],
            "3": [[300, 300], [380, 380], [430, 430], [360, 360]],
            "4": [[420, 420], [450, 500], [520, 520], [430, 430]],
            "5": [[260, 260], [300, 300], [340, 340], [290, 290]],
            "6": [[240, 240], [280, 280], [330, 330], [260, 260]],
        },
        "q_load": {
            "2": [[130, 130], [165, 165], [200, 200], [165, 165]],
            "3": [[100, 100], [125, 125], [140, 140], [120, 120]],
            "4": [[140, 140], [150, 150], [170, 170], [140, 140]],
            "5": [[85, 85], [100, 100], [110, 110], [95, 95]],
            "6": [[80, 80], [90, 90], [110, 110], [85, 85]],
        },
        "pv": {
            "1": [[0, 0], [0, 0], [0, 0], [0, 0]],
            "2": [[0, 0], [0, 30], [0, 30], [0, 0]],
            "3": [[0, 0], [0, 0], [0, 0], [0, 0]],
            "4": [[0, 0], [0, 0], [0, 0], [0, 0]],
            "5": [[0, 0], [0, 0], [0, 0], [0, 0]],
        },
    },
    "ess": None,
    "substation": {"p_min": 0.0, "p_max": 8000.0, "q_min": -4000.0, "q_max": 4000.0},
    "voltage": {"v_min": 0.9, "v_max": 1.1},
    "finance": {"inflation_rate": 0.05, "life_line_years": 20, "life_rcs_years": 20},
}


def _stochastic_variant() -> dict:
    """Small stochastic-fleet instance for the seeded convergence studies."""
    data = json.loads(json.dumps(TOY6))
    data["name"] = "toy6s"
    data["nodes"] = data["nodes"][:4]
    keep = {1, 2, 3, 4}
    data["candidate_lines"] = [l for l in data["candidate_lines"]
                               if l["i"] in keep and l["j"] in keep]
    data["hubs"] = [h for h in data["hubs"] if h["node"] in keep]
    hub_ids = {h["id"] for h in data["hubs"]}
    data["hub_edges"] = [e for e in data["hub_edges"] if e[0] in hub_ids and e[1] in hub_ids]
    data["rcs_min_count"] = 1
    data["fleet"] = {"v_min": 6, "v_max": 14}
    data["tou_prices"] = data["tou_prices"][:3]
    data["ev"]["charge_window"] = [1, 2]
    for section in data["diu_box"].values():
        for key in list(section):
            if int(key) not in keep and section is not data["diu_box"]["pv"]:
                del section[key]
        for key in list(section):
            section[key] = section[key][:3]
    data["diu_box"]["pv"] = {str(h["id"]): [[0, 0], [0, 20], [0, 20]][:3] for h in data["hubs"]}
    # one free load dimension keeps the robust side two-vertex
    data["diu_box"]["p_load"]["2"] = [[400, 400], [500, 540], [600, 600]]
    data["diu_box"]["p_load"]["4"] = [[420, 420], [450, 450], [520, 520]]
    return data


def main() -> None:
    FIXDIR.mkdir(parents=True, exist_ok=True)
    (FIXDIR / "toy6.json").write_text(json.dumps(TOY6, indent=2) + "\n")
    (FIXDIR / "toy6s.json").write_text(json.dumps(_stochastic_variant(), indent=2) + "\n")
    print("wrote", FIXDIR / "toy6.json")
    print("wrote", FIXDIR / "toy6s.json")


if __name__ == "__main__":
    main()
