"""trigward: trigger-activated classifiers and transferable-attack
robustness benchmarking on desk-scale model zoos."""

__version__ = "0.1.0"

from . import attacks, data, defenses, evaluation, theory, training, trigger
from .attacks import AttackConfig, Perturbation, attack_success_rate, clip_perturbation, run_attack
from .data import Batch, LabeledImageSet, batch_iterator, load_dataset
from .defenses import PreprocessorConfig, bit_depth_reduce, defend_then_predict, gaussian_filter, resize_and_pad
from .evaluation import RobustnessMatrix, clean_accuracy, mean_over_surrogates, mean_over_victims, robust_accuracy
from .models import Classifier, GradientBundle, build_model, forward_logits, grad
from .theory import flip_experiment, gradient_alignment, linearization_error, theorem2_check, trigger_magnitude
from .training import TrainSchedule, TriggeredModel, total_trigger_loss, train_adversarial_pgd, train_fixed_trigger, train_learnable_trigger, train_standard
from .trigger import Trigger, apply_trigger, init_fixed_trigger, init_learnable_trigger, update_learnable_trigger
