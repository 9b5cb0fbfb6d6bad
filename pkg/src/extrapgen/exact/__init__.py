from .bayesnet import (
    DiscreteBayesNet,
    EnumerationBoundError,
    Factor,
    StructureReport,
    UndefinedConditionalError,
    Variable,
    check_structure,
    condition,
    d_separated,
    joint,
    load_net,
    marginalize,
    multiply,
    net_from_dict,
    net_to_dict,
    save_net,
)
from .builders import (
    fig3a_net,
    fig3b_leaky_net,
    fig3b_net,
    fig3b_unselected,
    fig3b_witness_template,
    leak_weights,
)
from .identify import (
    AssumptionError,
    ExistenceError,
    IdentificationError,
    SingularityError,
    SpecificationPartition,
    StructureError,
    WitnessNotFoundError,
    conditional_mutual_information,
    conservative_identify,
    construct_positive_point,
    identify_no_shared,
    nonidentifiability_witness,
    selected_joint,
    true_novel_conditional,
    tv_distance,
    witness_distances,
)
