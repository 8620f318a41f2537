import pytest

from sqlsynth.canon import (
    CoarseTemplate,
    coarse_bindings,
    from_coarse,
    parse_sql,
    render,
    strip_values,
    template_from_text,
    template_info,
    template_slot_counts,
    to_coarse,
)
from sqlsynth.errors import (
    AssignmentError,
    ResolutionError,
    UnsupportedSyntaxError,
)

HIGHLAND = (
    "SELECT T1.id, T2.name FROM Students AS T1 JOIN Schools AS T2 "
    "WHERE T1.school = T2.id AND T2.name = 'Highland Secondary'"
)


class TestParse:
    def test_count_star(self, social_env):
        ast = parse_sql("select count ( * ) from Friend", social_env)
        assert len(ast.select) == 1
        assert ast.select[0].agg == "count"
        assert ast.from_.tables == (1,)

    def test_alias_resolution_drops_alias(self, campus_env):
        ast = parse_sql("SELECT T1.id FROM Students AS T1", campus_env)
        col = ast.select[0].left
        assert (col.table_index, col.name) == (0, "id")
        assert render(ast, campus_env) == "select id from Students"

    def test_unsupported_construct_named(self, shop_env):
        with pytest.raises(UnsupportedSyntaxError) as err:
            parse_sql("SELECT * FROM store WINDOW w AS ()", shop_env)
        assert "WINDOW" in str(err.value)

    def test_unknown_identifier(self, shop_env):
        with pytest.raises(ResolutionError):
            parse_sql("select nosuch from store", shop_env)
        with pytest.raises(ResolutionError):
            parse_sql("select name from warehouse", shop_env)

    def test_where_join_condition_migrates(self, campus_env):
        ast = parse_sql(HIGHLAND, campus_env)
        assert len(ast.where.conditions) == 1
        assert len(ast.from_.joins[0]) == 1
        assert render(ast, campus_env) == (
            "select T1.id , T2.name from Students as T1 join Schools as T2 "
            "on T1.school = T2.id where T2.name = 'Highland Secondary'"
        )

    def test_or_blocks_join_migration(self, campus_env):
        sql = (
            "select T1.id from Students as T1 join Schools as T2 "
            "where T1.school = T2.id or T2.name = 'Bayview High'"
        )
        ast = parse_sql(sql, campus_env)
        assert len(ast.where.conditions) == 2
        assert ast.from_.joins == ((),)

    def test_self_join_rejected(self, campus_env):
        with pytest.raises(UnsupportedSyntaxError, match="self-join"):
            parse_sql(
                "select T1.name from Students as T1 join Students as T2 on T1.id = T2.id",
                campus_env,
            )


CANONICAL_QUERIES = [
    "select count ( * ) from Friend",
    "select name from Highschooler",
    "select name from Highschooler where grade > 9",
    "select distinct name from Highschooler order by name",
    "select min ( grade ) , avg ( grade ) , max ( grade ) from Highschooler",
    "select name from Highschooler where grade between 9 and 10",
    "select name from Highschooler where name like 'J%'",
    "select count ( distinct grade ) from Highschooler",
    "select T2.name from Friend as T1 join Highschooler as T2 on T1.student_id = T2.id",
    (
        "select T2.name from Friend as T1 join Highschooler as T2 "
        "on T1.student_id = T2.id where T2.grade = 9"
    ),
    "select grade , count ( * ) from Highschooler group by grade",
    "select grade from Highschooler group by grade having count ( * ) >= 2",
    "select name from Highschooler order by grade desc limit 1",
    "select name from Highschooler where grade = 9 intersect select name from Highschooler where grade = 10",
    "select name from Highschooler union select name from Highschooler where grade = 9",
    "select name from Highschooler except select name from Highschooler where grade = 9",
    "select name from Highschooler where id in ( select student_id from Friend )",
    "select name from Highschooler where id not in ( select student_id from Friend )",
    "select name from Highschooler where grade != 10",
    "select grade - id from Highschooler",
]


class TestRender:
    def test_count_star_golden(self, social_env):
        ast = parse_sql("select count ( * ) from Friend", social_env)
        assert render(ast, social_env) == "select count ( * ) from Friend"

    @pytest.mark.parametrize("sql", CANONICAL_QUERIES)
    def test_parse_render_fixed_point(self, social_env, sql):
        ast = parse_sql(sql, social_env)
        canonical = render(ast, social_env)
        assert canonical == sql
        assert parse_sql(canonical, social_env) == ast

    def test_messy_input_canonicalizes(self, social_env):
        messy = "SELECT   NAME from HIGHSCHOOLER WHERE GRADE=9"
        assert render(parse_sql(messy, social_env), social_env) == (
            "select name from Highschooler where grade = 9"
        )

    def test_trailing_semicolon_tolerated(self, social_env):
        ast = parse_sql("select name from Highschooler;", social_env)
        assert render(ast, social_env) == "select name from Highschooler"

    def test_two_alias_first_appearance_order(self, shop_env):
        sql = "select T2.name , T1.city from store as T1 join product as T2 on T1.id = T2.store_id"
        ast = parse_sql(sql, shop_env)
        assert render(ast, shop_env) == sql
        # Aliases renamed in the input do not change the canonical form.
        renamed = sql.replace("T1", "Ta").replace("T2", "Tb")
        assert render(parse_sql(renamed, shop_env), shop_env) == sql

    def test_double_quoted_string_normalized(self, social_env):
        ast = parse_sql('select name from Highschooler where name = "Haley"', social_env)
        assert render(ast, social_env) == "select name from Highschooler where name = 'Haley'"

    def test_quote_escaping_round_trip(self, social_env):
        sql = "select name from Highschooler where name = 'O''Brien'"
        ast = parse_sql(sql, social_env)
        assert render(ast, social_env) == sql


class TestStripValues:
    def test_strip_string_literal(self, campus_env):
        ast = parse_sql("select name from Schools where name = 'Highland Secondary'", campus_env)
        assert render(strip_values(ast), campus_env) == (
            "select name from Schools where name = <val>"
        )

    def test_no_literals_unchanged(self, social_env):
        ast = parse_sql("select name from Highschooler", social_env)
        assert strip_values(ast) == ast

    def test_between_strips_both(self, social_env):
        ast = parse_sql("select name from Highschooler where grade between 3 and 7", social_env)
        assert render(strip_values(ast), social_env) == (
            "select name from Highschooler where grade between <val> and <val>"
        )

    def test_literal_substitution_invariance(self, social_env):
        a = parse_sql("select name from Highschooler where grade = 9", social_env)
        b = parse_sql("select name from Highschooler where grade = 12", social_env)
        assert strip_values(a) == strip_values(b)


class TestToCoarse:
    def test_highland_golden(self, campus_env):
        template = to_coarse(parse_sql(HIGHLAND, campus_env), campus_env)
        assert template.text == "select key1 , text1 where text2 = val"
        assert template.join_arity == 2

    def test_count_star_template(self, social_env):
        template = to_coarse(parse_sql("select count ( * ) from Friend", social_env), social_env)
        assert template.text == "select count ( * )"
        assert template.join_arity == 1

    def test_column_repeat_reuses_slot(self, shop_env):
        ast = parse_sql("select city , count ( * ) from store group by city", shop_env)
        template = to_coarse(ast, shop_env)
        assert template.text == "select text1 , count ( * ) group by text1"

    def test_filter_repeat_reuses_slot(self, shop_env):
        ast = parse_sql("select name from product where price > 5 and price < 20", shop_env)
        template = to_coarse(ast, shop_env)
        assert template.text == "select text1 where number1 > val and number1 < val"

    def test_alias_and_case_invariance(self, campus_env):
        other = (
            "select S.id, K.name from Students as S join Schools as K "
            "where S.school = K.id and K.name = 'Bayview High'"
        )
        t1 = to_coarse(parse_sql(HIGHLAND, campus_env), campus_env)
        t2 = to_coarse(parse_sql(other, campus_env), campus_env)
        assert t1 == t2

    def test_slot_indices_dense(self, shop_env, corpus):
        for example in corpus:
            template = to_coarse(parse_sql(example.gold_sql, shop_env), shop_env)
            seen: dict[str, int] = {}
            for slot in template_info(template).column_slots:
                prefix = slot.stype
                index = int(slot.name[len(prefix):])
                assert index == seen.get(prefix, 0) + 1
                seen[prefix] = index

    def test_having_count_value_slot_unbound(self, social_env):
        ast = parse_sql(
            "select grade from Highschooler group by grade having count ( * ) >= 2", social_env
        )
        template = to_coarse(ast, social_env)
        assert template.text == "select number1 group by number1 having count ( * ) >= val"
        assert template_info(template).value_slots == (None,)


class TestFromCoarse:
    def test_round_trip_template_text(self, shop_env, corpus):
        for example in corpus:
            template = to_coarse(parse_sql(example.gold_sql, shop_env), shop_env)
            rebuilt = template_from_text(template.text, template.join_arity)
            assert rebuilt == template

    def test_single_slot_single_table(self, shop_env):
        template = template_from_text("select text1", 1)
        city = shop_env.find_column(0, "city")
        ast = from_coarse(template, {"text1": city}, [], shop_env)
        assert render(ast, shop_env) == "select city from store"

    def test_injectivity_error(self, shop_env):
        template = template_from_text("select text1 , text2", 1)
        city = shop_env.find_column(0, "city")
        with pytest.raises(AssignmentError):
            from_coarse(template, {"text1": city, "text2": city}, [], shop_env)

    def test_type_mismatch_error(self, shop_env):
        template = template_from_text("select key1", 1)
        city = shop_env.find_column(0, "city")
        with pytest.raises(AssignmentError):
            from_coarse(template, {"key1": city}, [], shop_env)

    def test_missing_slot_error(self, shop_env):
        template = template_from_text("select text1 where number1 = val", 1)
        with pytest.raises(AssignmentError, match="missing"):
            from_coarse(template, {"text1": shop_env.find_column(0, "city")}, [5], shop_env)

    def test_join_rebuilt_from_assignment(self, campus_env):
        template = template_from_text("select key1 , text1 where text2 = val", 2)
        assignment = {
            "key1": campus_env.find_column(0, "id"),
            "text1": campus_env.find_column(1, "name"),
            "text2": campus_env.find_column(0, "name"),
        }
        ast = from_coarse(template, assignment, ["Bob"], campus_env)
        assert render(ast, campus_env) == (
            "select T1.id , T2.name from Students as T1 join Schools as T2 "
            "on T1.school = T2.id where T1.name = 'Bob'"
        )

    def test_tableless_scope_requires_choice(self, social_env):
        template = template_from_text("select count ( * )", 1)
        with pytest.raises(AssignmentError, match="tab1"):
            from_coarse(template, {}, [], social_env)
        ast = from_coarse(template, {}, [], social_env, tables={"tab1": 1})
        assert render(ast, social_env) == "select count ( * ) from Friend"

    def test_slot_counts(self, campus_env):
        template = to_coarse(parse_sql(HIGHLAND, campus_env), campus_env)
        assert template_slot_counts(template) == {"key": 1, "text": 2}


class TestCoarseBindings:
    @pytest.mark.parametrize(
        "sql",
        [
            "select name from Highschooler where grade = 9",
            "select count ( * ) from Friend",
            "select grade , count ( * ) from Highschooler group by grade",
            "select name from Highschooler order by grade desc limit 1",
            (
                "select T1.student_id , T2.name from Friend as T1 join Highschooler as T2 "
                "on T1.student_id = T2.id where T2.grade = 9"
            ),
        ],
    )
    def test_own_bindings_rebuild_equivalent_query(self, social_env, sql):
        # The rebuilt query must execute to the same denotation; checked
        # string-wise here for cases where the join path is unique, and
        # checked by execution in test_execution.
        ast = parse_sql(sql, social_env)
        template, assignment, values, tables = coarse_bindings(ast, social_env)
        rebuilt = from_coarse(template, assignment, values, social_env, tables=tables)
        assert render(rebuilt, social_env) == render(ast, social_env)
