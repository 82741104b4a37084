"""Protocol mini-language: parsing, printing, evaluation."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ablasim.protocol import (
    AdvanceAction,
    EndAction,
    EvalContext,
    ProtocolEvalError,
    ProtocolSyntaxError,
    SetAction,
    UnknownVariableError,
    format_program,
    link_program,
    parse_protocol,
    tick,
)

BASIC = (
    "PHASE main\n"
    "WHEN temperature_avg > 105 SET power = power - 10\n"
    "WHEN time > 720 END\n"
)


class TestParse:
    def test_basic_program_shape(self):
        program = parse_protocol(BASIC)
        assert len(program.phases) == 1
        phase = program.phases[0]
        assert phase.name == "main"
        assert len(phase.rules) == 2
        assert isinstance(phase.rules[0].action, SetAction)
        assert phase.rules[0].action.target == "power"
        assert isinstance(phase.rules[1].action, EndAction)

    def test_empty_program(self):
        with pytest.raises(ProtocolSyntaxError, match="empty program"):
            parse_protocol("")
        with pytest.raises(ProtocolSyntaxError, match="empty program"):
            parse_protocol("   \n\n  # just a comment\n")

    def test_truncated_expression_reports_location(self):
        with pytest.raises(ProtocolSyntaxError) as err:
            parse_protocol("PHASE p\nWHEN (t >")
        assert err.value.line == 2
        assert err.value.column == 9  # the dangling comparison operator

    def test_missing_end_rule_rejected(self):
        with pytest.raises(ProtocolSyntaxError, match="END"):
            parse_protocol("PHASE only\nWHEN time > 5 SET power = 0\n")

    def test_multi_phase_and_comments(self):
        src = (
            "# staged protocol\n"
            "PHASE warmup\n"
            "WHEN time >= 0 SET power = 20  # gentle start\n"
            "WHEN temperature_avg > 60 ADVANCE\n"
            "PHASE full\n"
            "WHEN 1 SET power = 70\n"
            "WHEN time > 600 END\n"
        )
        program = parse_protocol(src)
        assert [p.name for p in program.phases] == ["warmup", "full"]
        assert isinstance(program.phases[0].rules[1].action, AdvanceAction)

    def test_operator_precedence(self):
        program = parse_protocol(
            "PHASE p\nWHEN 1 + 2 * 3 ^ 2 == 19 END\n"
        )
        guard = program.phases[0].rules[0].action
        result = tick(parse_protocol("PHASE p\nWHEN 1 + 2 * 3 ^ 2 == 19 END\n"),
                      EvalContext())
        assert result.terminated

    def test_if_expression_and_logic(self):
        src = "PHASE p\nWHEN !(time < 5) && time <= 20 SET power = if(time > 10, 1, 2)\nWHEN 0 END\n"
        program = parse_protocol(src)
        out = tick(program, EvalContext(time=15.0))
        assert out.variables["power"] == 1.0
        out = tick(program, EvalContext(time=7.0))
        assert out.variables["power"] == 2.0
        out = tick(program, EvalContext(time=3.0))
        assert "power" not in out.variables

    def test_link_rejects_unknown_variable(self):
        program = parse_protocol("PHASE p\nWHEN bogus > 1 END\n")
        with pytest.raises(UnknownVariableError, match="bogus"):
            link_program(program, arguments=("time",))
        link_program(program, arguments=("time",), parameters=("bogus",))

    def test_link_allows_set_targets(self):
        program = parse_protocol(
            "PHASE p\nWHEN time > 0 SET power = 5\nWHEN power > 1 END\n"
        )
        link_program(program, arguments=("time",))


class TestRoundTrip:
    CASES = [
        BASIC,
        "PHASE a\nWHEN -time ^ 2 < -4 SET x = (1 + 2) * 3\nWHEN 1 ADVANCE\n"
        "PHASE b\nWHEN !(x == 9) || time > 7 END\n",
        "PHASE p\nWHEN if(time > 1, 2, 3) != 2 SET y = 2 ^ 3 ^ 2\nWHEN y >= 512 END\n",
    ]

    @pytest.mark.parametrize("source", CASES)
    def test_parse_print_parse_fixed_cases(self, source):
        program = parse_protocol(source)
        assert parse_protocol(format_program(program)) == program

    @given(st.data())
    @settings(max_examples=60, deadline=None)
    def test_parse_print_parse_random_expressions(self, data):
        names = st.sampled_from(["time", "power", "temperature_avg", "x"])
        numbers = st.floats(
            min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False
        ).map(lambda v: abs(v))

        def expr(depth):
            if depth <= 0:
                return st.one_of(numbers.map(repr), names)
            sub = expr(depth - 1)
            return st.one_of(
                sub,
                st.tuples(sub, st.sampled_from("+-*/^"), sub).map(
                    lambda t: f"({t[0]} {t[1]} {t[2]})"
                ),
                st.tuples(sub, st.sampled_from(["<", "<=", ">", ">=", "==", "!="]), sub)
                .map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
                st.tuples(sub, sub, sub).map(
                    lambda t: f"if({t[0]}, {t[1]}, {t[2]})"
                ),
                sub.map(lambda s: f"(!({s}))"),
                sub.map(lambda s: f"-({s})"),
            )

        guard = data.draw(expr(3))
        value = data.draw(expr(2))
        source = f"PHASE p\nWHEN {guard} SET power = {value}\nWHEN 0 END\n"
        program = parse_protocol(source)
        assert parse_protocol(format_program(program)) == program


class TestTick:
    def test_no_guard_true_is_a_noop(self):
        program = parse_protocol(BASIC)
        ctx = EvalContext(
            variables={"power": 150.0, "temperature_avg": 90.0}, time=10.0
        )
        out = tick(program, ctx)
        assert out.variables == ctx.variables
        assert out.phase == 0
        assert not out.terminated

    def test_end_guard_fires(self):
        program = parse_protocol(BASIC)
        ctx = EvalContext(
            variables={"power": 150.0, "temperature_avg": 90.0}, time=800.0
        )
        assert tick(program, ctx).terminated

    def test_set_applies_expression(self):
        program = parse_protocol(BASIC)
        ctx = EvalContext(
            variables={"power": 150.0, "temperature_avg": 110.0}, time=10.0
        )
        out = tick(program, ctx)
        assert out.variables["power"] == 140.0

    def test_same_tick_set_visibility(self):
        src = (
            "PHASE p\n"
            "WHEN 1 SET power = 10\n"
            "WHEN power == 10 SET power = power + 5\n"
            "WHEN 0 END\n"
        )
        out = tick(parse_protocol(src), EvalContext(variables={"power": 0.0}))
        assert out.variables["power"] == 15.0

    def test_advance_short_circuits(self):
        src = (
            "PHASE a\n"
            "WHEN 1 ADVANCE\n"
            "WHEN 1 SET power = 99\n"
            "PHASE b\n"
            "WHEN time > 10 END\n"
        )
        out = tick(parse_protocol(src), EvalContext(variables={"power": 1.0}))
        assert out.phase == 1
        assert out.variables["power"] == 1.0

    def test_advance_past_last_phase_terminates(self):
        src = "PHASE a\nWHEN 1 ADVANCE\nPHASE b\nWHEN 1 ADVANCE\nWHEN 0 END\n"
        program = parse_protocol(src)
        out = tick(program, EvalContext(phase=1))
        assert out.terminated

    def test_division_by_zero_names_rule(self):
        src = "PHASE p\nWHEN 1 SET power = 1 / time\nWHEN 0 END\n"
        with pytest.raises(ProtocolEvalError, match="line 2"):
            tick(parse_protocol(src), EvalContext(time=0.0))

    def test_tick_is_pure(self):
        program = parse_protocol(BASIC)
        ctx = EvalContext(
            variables={"power": 150.0, "temperature_avg": 110.0}, time=10.0
        )
        first = tick(program, ctx)
        second = tick(program, ctx)
        assert first == second
        assert ctx.variables["power"] == 150.0  # context untouched

    def test_parameters_visible_in_scope(self):
        src = "PHASE p\nWHEN 1 SET power = CONSTANT_INPUT_POWER\nWHEN time > 1 END\n"
        out = tick(
            parse_protocol(src),
            EvalContext(parameters={"CONSTANT_INPUT_POWER": 60.0}, time=0.5),
        )
        assert out.variables["power"] == 60.0

    @pytest.mark.parametrize(
        "source",
        [
            BASIC,
            "PHASE a\nWHEN time > 10 ADVANCE\nPHASE b\nWHEN time > 20 END\n",
            "PHASE p\nWHEN time > 5 && power > 0 END\nWHEN time > 30 END\n",
        ],
    )
    def test_monotone_guards_terminate(self, source):
        program = parse_protocol(source)
        ctx = EvalContext(variables={"power": 1.0, "temperature_avg": 50.0})
        terminated = False
        for step in range(100):
            ctx.time = float(step * 10)
            result = tick(program, ctx)
            ctx.variables = result.variables
            ctx.phase = result.phase
            if result.terminated:
                terminated = True
                break
        assert terminated
