# Defines the network nodes and their per-interval behaviour

from src.channel import NodeGeometry
from src.protocols import detect, relay_step


class Node:
    def __init__(self, node_type_key, config_data, geometry, senses=None):
        self.type_key = node_type_key
        self.config = config_data[node_type_key]  # The NODE_TYPES entry for this node
        self.ui_name = self.config.get("ui_name", "Node")
        self.emits = self.config.get("emits")
        self.senses = senses if senses is not None else self.config.get("senses")
        self.geometry = geometry

        self.interval_sum = 0   # Samples collected so far in the running interval
        self.sums = []          # Weighted sum of every closed interval
        self.decisions = []     # Threshold decisions, one per closed interval that was decided
        self.emissions = []     # Molecules released at the start of each interval

    @property
    def center(self):
        return self.geometry.center

    def emit(self, state, j):
        """Releases this node's molecules at the start of interval j (1-based) and returns the count."""
        count = 0
        if self.type_key == "SOURCE":
            if j <= len(state.bits) and state.bits[j - 1]:
                count = state.config.n_a1
        elif self.type_key == "RELAY":
            # Forward what was observed during the previous interval
            observed_prev = self.sums[j - 2] if j >= 2 else 0
            count = relay_step(state.protocol, state.schedule, observed_prev, self.decisions, j,
                               relay_threshold=state.detection.xi_r)

        self.emissions.append(count)
        if count > 0:
            state.ensemble.add(self.emits, self.center, count, state.time)
        return count

    def update(self, state):
        """Called at every sample time: adds the molecules currently inside the node to the interval sum."""
        if self.senses is None:
            return
        self.interval_sum += state.ensemble.count_inside(self.geometry, self.senses)

    def close_interval(self, threshold=None):
        """Stores the finished interval's sum and, given a threshold, the decision on it."""
        total = self.interval_sum
        self.sums.append(total)
        self.interval_sum = 0
        if threshold is not None:
            self.decisions.append(detect(total, threshold))
        return total


def build_nodes(system_config, protocol, config_data):
    """Source, relay (when the protocol has one) and destination for one trial."""
    cfg = system_config
    nodes = {"SOURCE": Node("SOURCE", config_data, NodeGeometry(cfg.source_position, 0.0))}
    if protocol.has_relay:
        nodes["RELAY"] = Node("RELAY", config_data, cfg.relay_node)
        nodes["DESTINATION"] = Node("DESTINATION", config_data, cfg.destination_node)
    else:
        # Direct link: the destination listens to the source's molecules
        nodes["DESTINATION"] = Node("DESTINATION", config_data, cfg.destination_node, senses="A1")
    return nodes
