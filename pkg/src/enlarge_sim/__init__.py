"""Monte Carlo laboratory for Levy filtrations progressively enlarged by a Cox random time."""
from .errors import (ConfigurationError, DomainError, EnlargeSimError, ModelError, StatisticalPowerError,
                     StructuralError)
from .levy_sim import (CharacteristicReport, JumpLedger, LevyModel, PathBatch, PathBundle, characteristic_exponent,
                       simulate_batch, simulate_path, verify_levy_characterization)
from .random_time import (AbsolutelyContinuous, EnlargedScenario, HazardSpec, ScenarioBatch, SingularContinuous,
                          cantor_function, draw_random_time, draw_random_times, stochastic_exponential_of_minus_M)
from .stoch_calc import (GridProcess, lebesgue_stieltjes_integral, quadratic_covariation, stochastic_integral)
from .features import BoundedFunction, FeatureSet, Payoff, bounded_function, feature_set, payoff
from .representation import (IntegrandSet, MartingaleFamily, OrthonormalBasis, build_family,
                             compare_representations, explicit_representation, regression_representation)
from .diagnostics import (azema_crosscheck, bracket_check, co_jump_audit, enlargement_identities,
                          martingale_increment_test, orthogonality_check, post_default_levy_check)
from .multiplicity import MultiplicityReport, TimeChangeReport, multiplicity_experiment, time_change_example

__version__ = "0.1.0"
