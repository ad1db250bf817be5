"""Plan-to-SQL compilation and execution.

A plan is compiled region by region. Every materialization step ("return")
roots a region; a region becomes one or more common table expressions:

* a mid-plan materialization becomes a CTE (``sp1``, ``sp2``, ...);
* a window rank inside a region is hoisted into its own CTE that copies the
  source's columns and appends the rank column;
* an aggregation whose input is itself a grouped aggregation is hoisted into
  a grouping CTE (keys + aggregate) that the outer region reads from.

Materializations whose columns are all ungrouped aggregates are known to be
single-row; other regions consume them through scalar subqueries rather than
joins. All literal values are emitted as ``?`` parameters.
"""

from __future__ import annotations

import sqlite3
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .errors import DbError, NoRelationshipError, UnsupportedPatternError
from .plans import SqrPlan, SqrStep, StepRef, analyze_plan
from .registry import get_signature
from .ring import Ring
from .types import ColumnMeta, DatetimeValue, ResultSet


@dataclass(frozen=True)
class Subplan:
    name: str          # CTE name (sp1, ...) or "main" for the terminal query
    kind: str          # "materialization" | "window" | "group" | "terminal"
    return_label: Optional[str] = None


@dataclass
class CompiledQuery:
    sql: str
    params: list
    output_columns: list[ColumnMeta]
    subplans: list[Subplan] = field(default_factory=list)


@dataclass
class JoinResolution:
    tables: list[str]        # table names, in FROM order
    conditions: list[str]    # "a"."x" = "b"."y" equalities


def _q(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def resolve_joins(ring: Ring, entities: list[str]) -> JoinResolution:
    """Connect the entities' primary tables through declared relationships."""
    first = ring.entity(entities[0])
    tables = [first.primary_table]
    conditions: list[str] = []
    connected = [entities[0]]
    remaining = list(entities[1:])
    while remaining:
        hop = None
        for a in connected:
            for b in remaining:
                rel = ring.relationship_between(a, b)
                if rel is not None:
                    hop = (b, rel)
                    break
            if hop:
                break
        if hop is None:
            raise NoRelationshipError(
                f"no relationship connects {remaining!r} to "
                f"{connected!r}")
        b, rel = hop
        for join_name in rel.join_path:
            j = ring.join(join_name)
            lt, lc = j.left.split(".")
            rt, rc = j.right.split(".")
            for t in (lt, rt):
                if t not in tables:
                    tables.append(t)
            conditions.append(f"{_q(lt)}.{_q(lc)} = {_q(rt)}.{_q(rc)}")
        remaining.remove(b)
        connected.append(b)
    return JoinResolution(tables=tables, conditions=conditions)


# ---------------------------------------------------------------------------


class _Compiler:
    def __init__(self, ring: Ring, plan: SqrPlan):
        self.ring = ring
        self.plan = plan
        self.info = analyze_plan(ring, plan)
        self.ctes: list[tuple[str, str, list]] = []  # (name, sql, params)
        self.subplans: list[Subplan] = []
        self._mat_cte: dict[str, str] = {}  # return label -> cte name

    def _new_cte(self, sql: str, params: list, kind: str,
                 return_label: Optional[str] = None) -> str:
        name = f"sp{len(self.ctes) + 1}"
        self.ctes.append((name, sql, params))
        self.subplans.append(Subplan(name=name, kind=kind,
                                     return_label=return_label))
        return name

    def compile(self) -> CompiledQuery:
        terminal = self.plan.result
        if self.plan.steps[terminal].op != "return":
            raise UnsupportedPatternError(
                "plan must terminate in a materialization")
        sql, params = self._region_sql(terminal)
        self.subplans.append(Subplan(name="main", kind="terminal",
                                     return_label=terminal))
        all_params: list = []
        pieces = []
        for name, cte_sql, cte_params in self.ctes:
            pieces.append(f"{name} AS (\n{cte_sql}\n)")
            all_params.extend(cte_params)
        all_params.extend(params)
        full = ("WITH " + ",\n".join(pieces) + "\n" if pieces else "") + sql
        columns = [c for _, c in self.info[terminal].columns]
        return CompiledQuery(sql=full, params=all_params,
                             output_columns=columns, subplans=self.subplans)

    # -- region helpers -------------------------------------------------------

    def _region(self, ret_label: str) -> tuple[set[str], set[str]]:
        steps: set[str] = set()
        upstream: set[str] = set()
        stack = [ret_label]
        while stack:
            label = stack.pop()
            if label in steps:
                continue
            if label != ret_label and self.plan.steps[label].op == "return":
                upstream.add(label)
                continue
            steps.add(label)
            stack.extend(self.plan.refs(label))
        return steps, upstream

    def _is_scalar_mat(self, ret_label: str) -> bool:
        ret = self.info[ret_label]
        return all(
            get_signature(self.plan.steps[l].op).is_aggregation
            and self.info[l].grouping_label is None
            for l in ret.collection_labels
        )

    def _materialize(self, ret_label: str) -> str:
        if ret_label not in self._mat_cte:
            sql, params = self._region_sql(ret_label)
            self._mat_cte[ret_label] = self._new_cte(
                sql, params, "materialization", ret_label)
        return self._mat_cte[ret_label]

    # -- region compilation --------------------------------------------------

    def _region_sql(self, ret_label: str) -> tuple[str, list]:
        region, upstream = self._region(ret_label)
        ret = self.info[ret_label]

        scalar_mats: dict[str, str] = {}
        row_mats: dict[str, str] = {}
        for up in sorted(upstream):
            cte = self._materialize(up)
            if self._is_scalar_mat(up):
                scalar_mats[up] = cte
            else:
                row_mats[up] = cte

        entity_labels = sorted(
            l for l in region
            if self.plan.steps[l].op == "retrieve_entity")
        # one alias per distinct entity
        entity_names: list[str] = []
        for l in entity_labels:
            if self.info[l].entity not in entity_names:
                entity_names.append(self.info[l].entity)

        if entity_names and row_mats:
            raise UnsupportedPatternError(
                "region mixes entity scans with multi-row materializations")
        if len(row_mats) > 1:
            raise UnsupportedPatternError(
                "region reads more than one multi-row materialization")

        ctx = _Region(self, region, ret_label, scalar_mats, row_mats,
                      entity_names)
        return ctx.build()


class _Region:
    def __init__(self, comp: _Compiler, steps: set[str], ret_label: str,
                 scalar_mats: dict[str, str], row_mats: dict[str, str],
                 entity_names: list[str]):
        self.c = comp
        self.steps = steps
        self.ret_label = ret_label
        self.scalar_mats = scalar_mats
        self.row_mats = row_mats
        self.entity_names = entity_names
        self.ret = comp.info[ret_label]
        # label -> (alias, column) overrides installed by hoisted CTEs
        self.column_of: dict[str, tuple[str, str]] = {}
        self.row_alias: Optional[str] = None
        self.from_sql = ""
        self.where_sql = ""
        self.where_params: list = []

    # -- FROM / WHERE -----------------------------------------------------------

    def _build_from(self) -> None:
        if self.entity_names:
            res = resolve_joins(self.c.ring, self.entity_names)
            self.from_sql = "FROM " + ", ".join(_q(t) for t in res.tables)
            self._join_conditions = list(res.conditions)
        elif self.row_mats:
            label, cte = next(iter(self.row_mats.items()))
            self.row_alias = cte
            self.from_sql = f"FROM {cte}"
            self._join_conditions = []
        else:
            self.from_sql = "FROM (SELECT 1)"
            self._join_conditions = []

    def _build_where(self) -> None:
        parts = list(self._join_conditions)
        params: list = []
        if self.ret.filter_label and not self._filter_consumed:
            sql, p = self.expr(self.ret.filter_label)
            parts.append(sql)
            params.extend(p)
        self.where_sql = ("WHERE " + " AND ".join(parts)) if parts else ""
        self.where_params = params

    # -- hoisted CTEs -------------------------------------------------------------

    def _hoist_windows(self) -> None:
        """Move window ranks into their own CTE over the row source."""
        ranks = [l for l in self.steps
                 if self.c.plan.steps[l].op == "row_number"]
        if not ranks:
            return
        if self.row_alias is None:
            raise UnsupportedPatternError(
                "window rank requires a materialized row source")
        src_label = next(iter(self.row_mats))
        src_cols = [c.name for _, c in self.c.info[src_label].columns]
        select = [f"{_q(c)}" for c in src_cols]
        for l in ranks:
            si = self.c.info[l]
            sort = self.c.info[si.value_label]
            keys = []
            for k in sort.key_labels:
                ks, kp = self.expr(k)
                if kp:
                    raise UnsupportedPatternError(
                        "window sort keys must be columns")
                keys.append(f"{ks} {'DESC' if sort.direction == 'desc' else 'ASC'}")
            # deterministic ranks: remaining columns break ties, ascending
            key_cols = {self.c.info[k].name for k in sort.key_labels}
            for c in src_cols:
                if c not in key_cols:
                    keys.append(f"{_q(c)} ASC")
            select.append(
                f"ROW_NUMBER() OVER (ORDER BY {', '.join(keys)}) AS "
                f"{_q(si.name)}")
        sql = f"SELECT {', '.join(select)}\nFROM {self.row_alias}"
        cte = self.c._new_cte(sql, [], "window")
        # the window CTE replaces the original row source
        self.row_alias = cte
        self.from_sql = f"FROM {cte}"
        for l in ranks:
            self.column_of[l] = (cte, self.c.info[l].name)

    def _hoist_nested_groups(self) -> None:
        """Aggregations over grouped aggregations read from a grouping CTE."""
        nested = []
        for l in self.steps:
            step = self.c.plan.steps[l]
            if not get_signature(step.op).is_aggregation:
                continue
            inner = self.c.info[l].value_label
            if inner and inner in self.steps and \
                    get_signature(self.c.plan.steps[inner].op).is_aggregation:
                nested.append((l, inner))
        if not nested:
            return
        inner_labels = {inner for _, inner in nested}
        if len(inner_labels) > 1:
            raise UnsupportedPatternError(
                "multiple nested aggregations in one region")
        inner = next(iter(inner_labels))
        inner_si = self.c.info[inner]
        if inner_si.grouping_label is None:
            raise UnsupportedPatternError(
                "aggregation over an ungrouped aggregation")
        keys = self.c.info[inner_si.grouping_label].key_labels
        select = []
        group = []
        for k in keys:
            ks, kp = self.expr(k)
            if kp:
                raise UnsupportedPatternError("group keys must be columns")
            select.append(f"{ks} AS {_q(self.c.info[k].name)}")
            group.append(ks)
        agg_sql, agg_params = self._agg_expr(inner)
        select.append(f"{agg_sql} AS {_q(inner_si.name)}")
        # the pre-aggregation filter belongs to the inner grouping
        inner_where = self.where_sql
        inner_params = list(self.where_params)
        self._filter_consumed = True
        sql = (f"SELECT {', '.join(select)}\n{self.from_sql}"
               + (f"\n{inner_where}" if inner_where else "")
               + f"\nGROUP BY {', '.join(group)}")
        cte = self.c._new_cte(sql, agg_params + inner_params, "group")
        # the grouping CTE becomes the region's row source
        self.row_alias = cte
        self.from_sql = f"FROM {cte}"
        self.column_of[inner] = (cte, inner_si.name)
        self._join_conditions = []
        self.where_sql = ""
        self.where_params = []

    # -- expressions ---------------------------------------------------------------

    def param(self, value) -> tuple[str, list]:
        if isinstance(value, DatetimeValue):
            return "?", [value.iso]
        if isinstance(value, bool):
            return "?", [int(value)]
        return "?", [value]

    def expr(self, label: str) -> tuple[str, list]:
        if label in self.column_of:
            alias, col = self.column_of[label]
            return f"{_q(col)}", []
        step = self.c.plan.steps[label]
        si = self.c.info[label]
        op = step.op

        if op == "retrieve_entity":
            e = self.c.ring.entity(si.entity)
            pk = self.c.ring.table(e.primary_table).primary_key
            return f"{_q(e.primary_table)}.{_q(pk)}", []

        if op == "retrieve_attribute":
            if si.attribute is not None:
                table, column = self.c.ring.attribute(*si.attribute).source
                return f"{_q(table)}.{_q(column)}", []
            if si.source_return in self.scalar_mats:
                cte = self.scalar_mats[si.source_return]
                return f"(SELECT {_q(si.source_column)} FROM {cte})", []
            return f"{_q(si.source_column)}", []

        if get_signature(op).is_aggregation:
            return self._agg_expr(label)

        args: list[tuple[str, list]] = []
        for a in step.args:
            if isinstance(a, StepRef):
                args.append(self.expr(a.label))
            else:
                args.append(self.param(a))

        def one(i):
            return args[i][0]

        params = [p for _, ps in args for p in ps]
        if op == "and":
            return "(" + " AND ".join(s for s, _ in args) + ")", params
        if op == "or":
            return "(" + " OR ".join(s for s, _ in args) + ")", params
        if op == "not":
            return f"(NOT {one(0)})", params
        if op == "exact":
            return f"({one(0)} = {one(1)})", params
        if op == "contains":
            return f"(instr({one(0)}, {one(1)}) > 0)", params
        if op == "greater_than":
            return f"({one(0)} > {one(1)})", params
        if op == "greater_than_eq":
            return f"({one(0)} >= {one(1)})", params
        if op == "less_than":
            return f"({one(0)} < {one(1)})", params
        if op == "less_than_eq":
            return f"({one(0)} <= {one(1)})", params
        if op == "add":
            return f"({one(0)} + {one(1)})", params
        if op == "subtract":
            return f"({one(0)} - {one(1)})", params
        if op == "multiply":
            return f"({one(0)} * {one(1)})", params
        if op == "divide":
            return (f"(CAST({one(0)} AS REAL) / "
                    f"NULLIF(CAST({one(1)} AS REAL), 0.0))", params)
        if op == "absolute_value":
            return f"ABS({one(0)})", params
        if op == "square_root":
            return f"SQRT({one(0)})", params
        if op == "percent_change":
            a, b = one(0), one(1)
            return (f"(CASE WHEN {a} = 0 THEN NULL ELSE "
                    f"100.0 * ({b} - {a}) / CAST({a} AS REAL) END)",
                    args[0][1] + args[1][1] + args[0][1] + args[0][1])
        if op == "duration":
            return (f"CAST(ROUND((julianday({one(1)}) - julianday({one(0)}))"
                    f" * 86400.0) AS INTEGER)",
                    args[1][1] + args[0][1])
        raise UnsupportedPatternError(f"cannot compile step {label!r} ({op})")

    def _agg_expr(self, label: str) -> tuple[str, list]:
        step = self.c.plan.steps[label]
        si = self.c.info[label]
        op = step.op
        if op == "correlation":
            refs = [a.label for a in step.args if isinstance(a, StepRef)]
            x, xp = self.expr(refs[0])
            y, yp = self.expr(refs[1])
            sx = f"SQRT(MAX(AVG({x}*{x}) - AVG({x})*AVG({x}), 0.0))"
            sy = f"SQRT(MAX(AVG({y}*{y}) - AVG({y})*AVG({y}), 0.0))"
            cov = f"(AVG({x}*{y}) - AVG({x})*AVG({y}))"
            return (f"(CASE WHEN COUNT({x}) < 2 THEN NULL ELSE "
                    f"{cov} / NULLIF({sx} * {sy}, 0.0) END)",
                    xp * 5 + yp * 5)
        v, vp = self.expr(si.value_label)
        if op == "average":
            return f"AVG({v})", vp
        if op == "sum":
            return f"(SUM({v}) * 1.0)", vp
        if op == "count":
            return f"COUNT({v})", vp
        if op == "count_unique":
            return f"COUNT(DISTINCT {v})", vp
        if op == "max":
            return f"MAX({v})", vp
        if op == "min":
            return f"MIN({v})", vp
        if op == "get_one":
            return f"MIN({v})", vp
        if op == "standard_deviation":
            return (f"SQRT(MAX(AVG({v}*{v}) - AVG({v})*AVG({v}), 0.0))",
                    vp * 4)
        if op in ("median", "string_agg"):
            # both compile to self-contained scalar subqueries that scan the
            # whole (filtered) row source, so they cannot honor a GROUP BY
            if si.grouping_label is not None:
                raise UnsupportedPatternError(f"grouped {op}")
            if op == "median":
                return self._median_expr(v, vp)
            return self._string_agg_expr(v, vp)
        raise UnsupportedPatternError(f"aggregation {op!r}")

    def _source_clause(self, extra_null_check: str) -> tuple[str, list]:
        where = self.where_sql
        params = list(self.where_params)
        if where:
            where += f" AND {extra_null_check}"
        else:
            where = f"WHERE {extra_null_check}"
        return f"{self.from_sql} {where}", params

    def _median_expr(self, v: str, vp: list) -> tuple[str, list]:
        src, sp = self._source_clause(f"{v} IS NOT NULL")
        inner = (f"SELECT {v} AS mv, "
                 f"ROW_NUMBER() OVER (ORDER BY {v}) AS mrn, "
                 f"COUNT(*) OVER () AS mcnt {src}")
        return (f"(SELECT AVG(mv) FROM ({inner}) "
                f"WHERE mrn IN ((mcnt + 1) / 2, (mcnt + 2) / 2))",
                vp + vp + sp + vp)

    def _string_agg_expr(self, v: str, vp: list) -> tuple[str, list]:
        src, sp = self._source_clause(f"{v} IS NOT NULL")
        inner = f"SELECT {v} AS sv {src} ORDER BY {v}"
        return (f"(SELECT GROUP_CONCAT(sv, ', ') FROM ({inner}))",
                vp + sp + vp + vp)

    # -- assembly ---------------------------------------------------------------

    def build(self) -> tuple[str, list]:
        self._filter_consumed = False
        self._build_from()
        self._build_where()
        self._hoist_windows()
        self._hoist_nested_groups()
        if not self._filter_consumed:
            self._build_where()

        ret = self.ret
        agg_labels = [l for l in ret.collection_labels
                      if get_signature(self.c.plan.steps[l].op).is_aggregation
                      and l not in self.column_of]
        grouped = [l for l in agg_labels
                   if self.c.info[l].grouping_label is not None]

        select_parts: list[str] = []
        select_params: list = []
        group_exprs: list[str] = []
        group_params: list = []
        for label, col in ret.columns:
            sql, p = self.expr(label)
            select_parts.append(f"{sql} AS {_q(col.name)}")
            select_params.extend(p)
            if agg_labels and label not in agg_labels:
                group_exprs.append(sql)
                group_params.extend(p)

        # medians and ordered string joins compile to self-contained scalar
        # subqueries (the row source and filter are embedded); when they are
        # the only outputs, the outer query must not rescan the row source
        subquery_only = agg_labels and not group_exprs and all(
            self.c.plan.steps[l].op in ("median", "string_agg")
            for l in agg_labels)
        from_sql = "FROM (SELECT 1)" if subquery_only else self.from_sql
        where_sql = "" if subquery_only else self.where_sql

        sql_lines = [f"SELECT {', '.join(select_parts)}", from_sql]
        params: list = list(select_params)
        if where_sql:
            sql_lines.append(where_sql)
            params.extend(self.where_params)
        if grouped and group_exprs:
            sql_lines.append(f"GROUP BY {', '.join(group_exprs)}")
            params.extend(group_params)
        elif agg_labels and group_exprs:
            raise UnsupportedPatternError(
                "per-row column collected alongside an ungrouped aggregation")

        order, order_params = self._order_clause()
        if order:
            sql_lines.append(order)
            params.extend(order_params)
        if ret.limit_label:
            n = self.c.plan.steps[ret.limit_label].args[0]
            sql_lines.append("LIMIT ?")
            params.append(int(n))
        return "\n".join(l for l in sql_lines if l), params

    def _order_clause(self) -> tuple[str, list]:
        ret = self.ret
        names = [col.name for _, col in ret.columns]
        if ret.sort_label:
            s = self.c.info[ret.sort_label]
            terms = []
            used = set()
            for k in s.key_labels:
                name = self.c.info[k].name
                # sort keys refer to output columns by their produced name
                if name in names:
                    used.add(name)
                    terms.append(
                        f"{_q(name)} {'DESC' if s.direction == 'desc' else 'ASC'}")
            for name in names:
                if name not in used:
                    terms.append(f"{_q(name)} ASC")
            return "ORDER BY " + ", ".join(terms), []
        return "ORDER BY " + ", ".join(f"{_q(n)} ASC" for n in names), []


# ---------------------------------------------------------------------------
# public entry points


def _with_terminal_return(plan: SqrPlan) -> SqrPlan:
    if plan.steps[plan.result].op == "return":
        return plan
    label = "_R"
    while label in plan.steps:
        label += "_"
    steps = dict(plan.steps)
    steps[label] = SqrStep(label, "return", (StepRef(plan.result),))
    return SqrPlan(steps=steps, result=label)


def compile_plan(ring: Ring, plan: SqrPlan) -> CompiledQuery:
    return _Compiler(ring, _with_terminal_return(plan)).compile()


def decompose(ring: Ring, plan: SqrPlan) -> list[Subplan]:
    """The subplan structure a plan compiles to (CTEs plus terminal query)."""
    return compile_plan(ring, plan).subplans


def execute(compiled: CompiledQuery,
            db_path: Union[str, Path]) -> ResultSet:
    try:
        conn = sqlite3.connect(str(db_path))
    except sqlite3.Error as e:
        raise DbError(f"cannot open database {db_path}: {e}",
                      sql=compiled.sql) from e
    try:
        conn.create_function("SQRT", 1, _sqlite_sqrt)
        cur = conn.execute(compiled.sql, compiled.params)
        rows = [tuple(r) for r in cur.fetchall()]
    except sqlite3.Error as e:
        raise DbError(str(e), sql=compiled.sql) from e
    finally:
        conn.close()
    return ResultSet(columns=compiled.output_columns, rows=rows, ordered=True)


def _sqlite_sqrt(x):
    if x is None or x < 0:
        return None
    import math

    return math.sqrt(x)


def run_plan(ring: Ring, plan: SqrPlan,
             db_path: Union[str, Path]) -> ResultSet:
    return execute(compile_plan(ring, plan), db_path)
