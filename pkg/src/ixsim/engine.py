"""Convergence engine and reporting for scenario runs.

One Simulation owns all mutable run state.  converge() rebuilds every
derived layer in a fixed order: shortest-path trees, label bindings, the
signalling session graph, membership adverts, the pseudo-wire mesh, then
member route exchange until no RIB changes.  Events mutate configuration
and re-converge; frame injection exercises only the data plane.

There is no randomness anywhere, so two runs of the same scenario produce
byte-identical reports, RIB dumps, traces and graph exports.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Set, Tuple

from ixsim.dataplane import (
    DEFAULT_PROBATION_ROUNDS,
    BridgeState,
    DropReason,
    EthernetFrame,
    Fabric,
    format_trace,
    promote_port,
)
from ixsim.exchange_l3 import (
    BgpRoute,
    MemberRib,
    PeerKind,
    PeeringSession,
    RouteServer,
    TransitPolicy,
    arp_resolve,
    reachability_matrix,
    rs_redistribute,
    transit_deliveries,
    upstream_announcements,
)
from ixsim.model import (
    LinkKind,
    LinkState,
    MemberAs,
    MemberPort,
    PortState,
    Topology,
    full_mesh_size,
)
from ixsim.scenario import Event, EventKind, Scenario
from ixsim.underlay import LabelAllocator, allocate_labels, compute_all_spf
from ixsim.vpls_signal import (
    IbgpKind,
    build_session_graph,
    derive_pseudowires,
    originate_adverts,
    propagate,
)


class UnknownEntityError(Exception):
    """An event referenced something the scenario does not contain."""


class NonconvergenceError(Exception):
    """Route exchange kept churning past the round cap; that is a bug."""


def round_cap(topo: Topology, members) -> int:
    return 4 * (len(topo.nodes) + len(members))


@dataclass
class _L3State:
    """Outcome of one full route-exchange sweep.  Comparable, so the
    convergence loop can detect its fixpoint."""

    ribs: Dict[int, MemberRib] = field(default_factory=dict)
    deliveries: List[Tuple[int, BgpRoute]] = field(default_factory=list)
    loop_drops: List[Tuple[str, int, BgpRoute]] = field(default_factory=list)
    upstream: List[BgpRoute] = field(default_factory=list)

    def __eq__(self, other) -> bool:
        return isinstance(other, _L3State) and self.ribs == other.ribs


class Simulation:
    """All state for one scenario run."""

    def __init__(self, scenario: Scenario, max_rounds: Optional[int] = None):
        self.scenario = scenario
        self.topo = scenario.topology
        self.members: Dict[int, MemberAs] = {m.asn: m for m in scenario.members}
        self.ports: Dict[int, MemberPort] = {p.member_asn: p for p in scenario.ports}
        self.max_rounds = max_rounds

        self.current_round = 0
        self.rounds_total = 0
        self.converge_count = 0
        self._trace_seq = 0

        self.trees = {}
        self.labels = {}
        self.ibgp_sessions: Set = set()
        self.adverts = {}
        self.received = {}
        self.pseudowires: tuple = ()
        self.missing_transport: tuple = ()
        self.fabric = Fabric(self.topo, {})
        self.l3 = _L3State()

    # -- configuration views -------------------------------------------------

    def announced(self, asn: int) -> Tuple[ipaddress.IPv4Network, ...]:
        return self.members[asn].announced_prefixes

    def active_sessions(self) -> List[PeeringSession]:
        """Configured sessions whose member endpoints have active ports."""
        out = []
        for s in self.scenario.sessions:
            if not self._port_active(s.a):
                continue
            if s.kind is not PeerKind.ROUTE_SERVER and not self._port_active(s.b):
                continue
            out.append(s)
        return out

    def _port_active(self, asn: int) -> bool:
        port = self.ports.get(asn)
        return port is not None and port.state is PortState.ACTIVE

    def active_servers(self) -> List[RouteServer]:
        """Route servers with quarantined clients filtered out."""
        out = []
        for server in self.scenario.route_servers:
            clients = tuple(c for c in server.client_sessions if self._port_active(c))
            out.append(replace(server, client_sessions=clients))
        return out

    # -- convergence ---------------------------------------------------------

    def converge(self) -> int:
        """Rebuild every derived layer; returns route-exchange rounds taken."""
        self.trees = compute_all_spf(self.topo)
        alloc = LabelAllocator()
        self.labels = allocate_labels(self.topo, self.trees, alloc)
        self.ibgp_sessions = build_session_graph(self.topo) if self.topo.nodes else set()
        self.adverts = originate_adverts(self.topo.node_names(), alloc)
        self.received = propagate(self.adverts, self.ibgp_sessions)
        self.pseudowires, self.missing_transport = derive_pseudowires(
            self.received, self.labels, self.trees)
        self._rebuild_fabric()

        cap = self.max_rounds if self.max_rounds is not None \
            else round_cap(self.topo, self.members)
        rounds = 0
        while True:
            sweep = self._exchange_routes()
            if sweep == self.l3:
                break
            self.l3 = sweep
            rounds += 1
            if rounds > cap:
                raise NonconvergenceError(
                    "route exchange still churning after %d rounds" % rounds)
        self.rounds_total += rounds
        self.converge_count += 1
        return rounds

    def _rebuild_fabric(self) -> None:
        """Fresh bridges wired to the current pseudo-wire mesh.  Learned MACs
        do not survive reconvergence; the logs and trace numbering do."""
        bridges = {}
        for name in self.topo.node_names():
            bridges[name] = BridgeState(pe=name)
        for port in self.ports.values():
            bridges[port.attach_pe].ports[port.member_asn] = port
        for pw in self.pseudowires:
            bridges[pw.pe_a].pws[pw.pe_b] = pw
            bridges[pw.pe_b].pws[pw.pe_a] = pw
        self.fabric = Fabric(self.topo, bridges,
                             trace=self.fabric.trace, drops=self.fabric.drops)

    def _exchange_routes(self) -> _L3State:
        """One synchronous sweep of every active session."""
        state = _L3State(ribs={asn: MemberRib(asn) for asn in self.members})
        sessions = self.active_sessions()

        def deliver(to_asn: int, route: BgpRoute) -> None:
            state.deliveries.append((to_asn, route))
            state.ribs[to_asn].add(route)

        for s in sorted((x for x in sessions if x.kind is PeerKind.BILATERAL),
                        key=lambda x: (x.a, x.b)):
            for left, right in ((s.a, s.b), (s.b, s.a)):
                for pfx in self.announced(left):
                    deliver(right, BgpRoute(
                        pfx, (left,), self.ports[left].exchange_ip, "bgp/%d" % left))

        for server in self.active_servers():
            learned = "rs/%s" % server.host_pe
            for client in sorted(server.client_sessions):
                for pfx in self.announced(client):
                    route = BgpRoute(pfx, (client,),
                                     self.ports[client].exchange_ip, learned)
                    for to_asn, reflected in rs_redistribute(
                            server, route, client, diagnostics=state.loop_drops):
                        deliver(to_asn, reflected)

        for asn in sorted(self.members):
            member = self.members[asn]
            if not member.is_transit or not self._port_active(asn):
                continue
            for to_asn, route in transit_deliveries(
                    member, self.ports[asn].exchange_ip, sessions,
                    self.scenario.external_prefixes):
                deliver(to_asn, route)

        member_prefixes = [p for m in self.members.values()
                           for p in m.announced_prefixes]
        for asn in sorted(self.members):
            member = self.members[asn]
            if member.is_transit and self._port_active(asn):
                state.upstream.extend(upstream_announcements(
                    member, state.ribs[asn], member_prefixes))
        return state

    # -- events ----------------------------------------------------------

    def apply_event(self, event: Event) -> None:
        self.current_round = max(self.current_round, event.at_round)
        kind = event.kind
        if kind in (EventKind.LINK_DOWN, EventKind.LINK_UP):
            a, b = event.args
            indices = self.topo.links_between(a, b)
            if not indices:
                raise UnknownEntityError("no link between %s and %s" % (a, b))
            target = LinkState.DOWN if kind is EventKind.LINK_DOWN else LinkState.UP
            for i in indices:
                self.topo = self.topo.with_link_state(i, target)
            self.converge()
        elif kind is EventKind.PORT_ADD:
            member, port = event.args
            self.members[member.asn] = member
            self.ports[port.member_asn] = port
            self.converge()
        elif kind is EventKind.PORT_PROMOTE_CHECK:
            (asn,) = event.args
            if asn not in self.ports:
                raise UnknownEntityError("no port for member %d" % asn)
            port = self.ports[asn]
            window_start = event.at_round - DEFAULT_PROBATION_ROUNDS
            observed = [d.reason for d in self.fabric.drops
                        if d.port_asn == asn
                        and window_start < d.round_no <= event.at_round]
            promoted = promote_port(port, observed)
            if promoted is not port:
                self.ports[asn] = promoted
                self.converge()
        elif kind is EventKind.INJECT_FRAME:
            asn, dst_mac, ethertype, size = event.args
            if asn not in self.ports:
                raise UnknownEntityError("no port for member %d" % asn)
            self._trace_seq += 1
            frame = EthernetFrame(
                src_mac=self.ports[asn].nominated_mac,
                dst_mac=dst_mac,
                ethertype=ethertype,
                payload_size=size,
                trace_id="t%d" % self._trace_seq,
            )
            self.fabric.inject(asn, frame, event.at_round)
        elif kind is EventKind.MEMBER_ANNOUNCE:
            asn, prefix = event.args
            if asn not in self.members:
                raise UnknownEntityError("no member %d" % asn)
            member = self.members[asn]
            if prefix not in member.announced_prefixes:
                self.members[asn] = replace(
                    member, announced_prefixes=member.announced_prefixes + (prefix,))
            self.converge()
        elif kind is EventKind.MEMBER_WITHDRAW:
            asn, prefix = event.args
            if asn not in self.members:
                raise UnknownEntityError("no member %d" % asn)
            member = self.members[asn]
            if prefix not in member.announced_prefixes:
                raise UnknownEntityError(
                    "member %d does not announce %s" % (asn, prefix))
            self.members[asn] = replace(
                member,
                announced_prefixes=tuple(p for p in member.announced_prefixes
                                         if p != prefix))
            self.converge()
        else:
            raise UnknownEntityError("unhandled event kind %s" % kind)

    def run(self) -> "Report":
        self.converge()
        for event in self.scenario.events:
            self.apply_event(event)
        return self.report()

    # -- outputs ---------------------------------------------------------

    def reachability(self) -> Dict[Tuple[int, str], bool]:
        return reachability_matrix(
            sorted(self.members.values(), key=lambda m: m.asn),
            self.ports,
            self.l3.ribs,
            self.scenario.external_prefixes,
            self.fabric,
            round_no=self.current_round,
        )

    def report(self) -> "Report":
        sessions = self.active_sessions()
        member_count = len(self.members)
        drops = {reason: 0 for reason in DropReason}
        for record in self.fabric.drops:
            drops[record.reason] += 1
        return Report(
            node_count=len(self.topo.nodes),
            member_count=member_count,
            convergence_rounds=self.rounds_total,
            pseudowire_count=len(self.pseudowires),
            missing_transport_count=len(self.missing_transport),
            ibgp_session_count=len(self.ibgp_sessions),
            rs_session_count=sum(
                1 for s in sessions if s.kind is PeerKind.ROUTE_SERVER),
            rs_server_count=len(self.scenario.route_servers),
            bilateral_session_count=sum(
                1 for s in sessions if s.kind is PeerKind.BILATERAL),
            transit_session_count=sum(
                1 for s in sessions if s.kind is PeerKind.TRANSIT),
            bilateral_equivalent=full_mesh_size(member_count),
            external_prefix_count=len(self.scenario.external_prefixes),
            drops=drops,
            frame_trace_rows=len(self.fabric.trace),
            reachability=self.reachability(),
            upstream=tuple(self.l3.upstream),
        )

    def rib_dump(self) -> str:
        """One line per selected route, pipe-separated, sorted."""
        lines = []
        for asn in sorted(self.l3.ribs):
            for prefix, route in self.l3.ribs[asn].chosen().items():
                lines.append("%d|%s|%s|%s|%s" % (
                    asn, prefix, " ".join(str(n) for n in route.as_path),
                    route.next_hop, route.learned_from))
        return "\n".join(sorted(lines)) + ("\n" if lines else "")

    def trace_dump(self) -> str:
        return format_trace(self.fabric.trace)


@dataclass
class Report:
    node_count: int
    member_count: int
    convergence_rounds: int
    pseudowire_count: int
    missing_transport_count: int
    ibgp_session_count: int
    rs_session_count: int
    rs_server_count: int
    bilateral_session_count: int
    transit_session_count: int
    bilateral_equivalent: int
    external_prefix_count: int
    drops: Dict[DropReason, int]
    frame_trace_rows: int
    reachability: Dict[Tuple[int, str], bool]
    upstream: tuple

    def to_text(self) -> str:
        lines = [
            "bilateral_equivalent=%d" % self.bilateral_equivalent,
            "bilateral_session_count=%d" % self.bilateral_session_count,
            "convergence_rounds=%d" % self.convergence_rounds,
            "external_prefix_count=%d" % self.external_prefix_count,
            "frame_trace_rows=%d" % self.frame_trace_rows,
            "ibgp_session_count=%d" % self.ibgp_session_count,
            "member_count=%d" % self.member_count,
            "missing_transport_count=%d" % self.missing_transport_count,
            "node_count=%d" % self.node_count,
            "pseudowire_count=%d" % self.pseudowire_count,
            "rs_server_count=%d" % self.rs_server_count,
            "rs_session_count=%d" % self.rs_session_count,
            "transit_session_count=%d" % self.transit_session_count,
            "upstream_announcement_count=%d" % len(self.upstream),
        ]
        for reason in DropReason:
            lines.append("drop.%s=%d" % (reason.value, self.drops[reason]))
        for (asn, prefix), ok in self.reachability.items():
            lines.append("reach.%d.%s=%d" % (asn, prefix, 1 if ok else 0))
        for route in self.upstream:
            lines.append("upstream.%s=%s" % (
                route.prefix, " ".join(str(n) for n in route.as_path)))
        return "\n".join(sorted(lines)) + "\n"


def converge(sim: Simulation) -> Tuple[Simulation, int]:
    """Drive sim to its fixpoint; returns it with the rounds this call took."""
    return sim, sim.converge()


def apply_event(sim: Simulation, event: Event) -> Simulation:
    sim.apply_event(event)
    return sim


# -- graph export ----------------------------------------------------------

DOT_LAYERS = ("physical", "vpls", "peering")


def export_dot(sim: Simulation, layer: str) -> str:
    """Graphviz text for one layer of the deployment.  Node and edge order
    are sorted, so output is stable across runs."""
    if layer not in DOT_LAYERS:
        raise ValueError("unknown layer %r" % layer)
    lines = ["graph %s {" % layer]
    if layer == "physical":
        for name in sim.topo.node_names():
            node = sim.topo.node(name)
            marks = []
            if node.is_route_reflector:
                marks.append("rr")
            if node.hosts_route_server:
                marks.append("rs")
            suffix = (" [xlabel=\"%s\"]" % ",".join(marks)) if marks else ""
            lines.append("  \"%s\"%s;" % (name, suffix))
        edges = []
        for i, link in enumerate(sim.topo.links):
            a, b = link.endpoints
            style = "solid" if link.kind is LinkKind.LEASED else "dashed"
            attrs = "label=\"%d\", style=%s" % (link.cost, style)
            if link.state is LinkState.DOWN:
                attrs += ", color=gray"
            edges.append((a, b, i, "  \"%s\" -- \"%s\" [%s];" % (a, b, attrs)))
        for _, _, _, text in sorted(edges):
            lines.append(text)
    elif layer == "vpls":
        for name in sim.topo.node_names():
            lines.append("  \"%s\";" % name)
        for pw in sorted(sim.pseudowires, key=lambda w: (w.pe_a, w.pe_b)):
            lines.append("  \"%s\" -- \"%s\" [label=\"%d/%d\"];"
                         % (pw.pe_a, pw.pe_b, pw.label_a_to_b, pw.label_b_to_a))
    else:
        for asn in sorted(sim.members):
            lines.append("  \"AS%d\";" % asn)
        for server in sim.scenario.route_servers:
            lines.append("  \"RS:%s\";" % server.host_pe)
        edges = []
        for s in sim.active_sessions():
            if s.kind is PeerKind.ROUTE_SERVER:
                edges.append("  \"AS%d\" -- \"RS:%s\" [style=dashed];"
                             % (s.a, s.rs_node))
            elif s.kind is PeerKind.BILATERAL:
                edges.append("  \"AS%d\" -- \"AS%d\";" % (s.a, s.b))
            else:
                edges.append("  \"AS%d\" -- \"AS%d\" [style=bold, label=\"%s\"];"
                             % (s.a, s.b, s.policy.value))
        lines.extend(sorted(edges))
    lines.append("}")
    return "\n".join(lines) + "\n"
